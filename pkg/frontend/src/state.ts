// Conversation state. Everything here is a pure function of the recorded
// (query, envelope) pairs, so a transcript replays into the identical UI.

import type { ConversationTurn, QueryResponse } from "./types.js";

export interface AttributionEntry {
  retrieverId: string;
  totalHits: number;
}

export class ConversationStore {
  private readonly turns_: ConversationTurn[] = [];
  private readonly now: () => number;

  constructor(now: () => number = Date.now) {
    this.now = now;
  }

  get turns(): readonly ConversationTurn[] {
    return this.turns_;
  }

  addTurn(queryText: string, envelope: QueryResponse): ConversationTurn {
    const turn: ConversationTurn = { queryText, envelope, timestamp: this.now() };
    this.turns_.push(turn);
    return turn;
  }

  /** Session-cumulative hit counts per retriever, for the attribution chart. */
  cumulativeAttribution(): AttributionEntry[] {
    const totals = new Map<string, number>();
    for (const turn of this.turns_) {
      for (const diag of turn.envelope.diagnostics) {
        totals.set(diag.retriever_id, (totals.get(diag.retriever_id) ?? 0) + diag.hits);
      }
    }
    return [...totals.entries()]
      .map(([retrieverId, totalHits]) => ({ retrieverId, totalHits }))
      .sort((a, b) => b.totalHits - a.totalHits || a.retrieverId.localeCompare(b.retrieverId));
  }
}

/** Rebuild a store from a recorded transcript. */
export function replayTranscript(
  transcript: Array<{ queryText: string; envelope: QueryResponse }>,
  now: () => number = Date.now,
): ConversationStore {
  const store = new ConversationStore(now);
  for (const entry of transcript) {
    store.addTurn(entry.queryText, entry.envelope);
  }
  return store;
}
