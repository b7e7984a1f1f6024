// DOM builders. Pure functions from API payloads to elements; no fetches, no
// derived business logic beyond counting what the envelopes already contain.

import type { AttributionEntry } from "./state.js";
import type {
  ConversationTurn,
  ContextSegment,
  QueryResponse,
  RefinedQuery,
  Zone,
} from "./types.js";

const ZONE_LABELS: Record<Zone, string> = {
  code: "Exploit code",
  question: "Question matches",
  info: "Contextual info",
};

const NO_INFO_TEXT = "No relevant information found for this query.";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderPathBadge(path: QueryResponse["path"]): HTMLElement {
  const badge = el("span", `badge badge-${path}`, path);
  badge.setAttribute("data-path", path);
  return badge;
}

function groupByZone(segments: ContextSegment[]): Map<Zone, ContextSegment[]> {
  const zones = new Map<Zone, ContextSegment[]>();
  for (const segment of segments) {
    const bucket = zones.get(segment.zone);
    if (bucket) {
      bucket.push(segment);
    } else {
      zones.set(segment.zone, [segment]);
    }
  }
  return zones;
}

/** One conversation turn: the query, the answer, badge, and context groups. */
export function renderTurn(turn: ConversationTurn): HTMLElement {
  const root = el("article", "turn");
  root.setAttribute("data-timestamp", String(turn.timestamp));

  const queryRow = el("div", "turn-query");
  queryRow.append(el("span", "turn-query-label", "you"), el("span", "turn-query-text", turn.queryText));
  root.append(queryRow);

  const answerRow = el("div", "turn-answer");
  const header = el("div", "turn-answer-header");
  header.append(renderPathBadge(turn.envelope.path));
  answerRow.append(header, el("pre", "turn-answer-text", turn.envelope.answer));
  root.append(answerRow);

  const segments = turn.envelope.context_segments ?? [];
  for (const [zone, zoneSegments] of groupByZone(segments)) {
    const details = el("details", "zone-group");
    details.setAttribute("data-zone", zone);
    const summary = el(
      "summary",
      "zone-summary",
      `${ZONE_LABELS[zone]} (${zoneSegments.length})`,
    );
    details.append(summary);
    for (const segment of zoneSegments) {
      const card = el("div", "segment");
      card.append(
        el(
          "div",
          "segment-meta",
          `${segment.retriever_id} · score ${segment.score.toFixed(4)} · ${segment.chunk_id}`,
        ),
        el("pre", "segment-text", segment.text ?? "(text omitted)"),
      );
      details.append(card);
    }
    root.append(details);
  }
  return root;
}

/** Per-retriever panels for one envelope; zero-hit retrievers are greyed. */
export function renderProvenance(envelope: QueryResponse): HTMLElement {
  const root = el("section", "provenance");
  if (envelope.path === "none") {
    root.append(el("div", "provenance-empty", NO_INFO_TEXT));
    return root;
  }
  const bestScores = new Map<string, number>();
  for (const segment of envelope.context_segments ?? []) {
    const prev = bestScores.get(segment.retriever_id);
    if (prev === undefined || segment.score > prev) {
      bestScores.set(segment.retriever_id, segment.score);
    }
  }
  for (const diag of envelope.diagnostics) {
    const active = diag.hits > 0;
    const panel = el("div", active ? "retriever-panel" : "retriever-panel greyed");
    panel.setAttribute("data-retriever", diag.retriever_id);
    panel.append(el("span", "retriever-name", diag.retriever_id));
    panel.append(el("span", "retriever-hits", `${diag.hits} hit${diag.hits === 1 ? "" : "s"}`));
    const best = bestScores.get(diag.retriever_id);
    if (best !== undefined) {
      panel.append(el("span", "retriever-score", `best ${best.toFixed(3)}`));
    }
    if (diag.error) {
      panel.append(el("span", "retriever-error", diag.error));
    }
    root.append(panel);
  }
  return root;
}

/** Session-cumulative attribution bar chart. */
export function renderAttributionChart(entries: AttributionEntry[]): HTMLElement {
  const root = el("section", "attribution-chart");
  root.append(el("h3", "attribution-title", "Retriever attribution (session)"));
  const max = Math.max(1, ...entries.map((e) => e.totalHits));
  for (const entry of entries) {
    const row = el("div", "attribution-row");
    row.setAttribute("data-retriever", entry.retrieverId);
    row.setAttribute("data-total-hits", String(entry.totalHits));
    const bar = el("div", "attribution-bar");
    bar.style.width = `${(entry.totalHits / max) * 100}%`;
    row.append(
      el("span", "attribution-label", entry.retrieverId),
      bar,
      el("span", "attribution-count", String(entry.totalHits)),
    );
    root.append(row);
  }
  return root;
}

function highlightedSubstituted(refined: RefinedQuery): HTMLElement {
  const container = el("div", "refined-substituted");
  const text = refined.substituted;
  // highlight the literal id strings the engine reported; the UI never
  // re-extracts identifiers on its own
  const spans: Array<{ start: number; end: number; id: string; description: string | null }> = [];
  for (const ref of refined.vuln_ids) {
    const needle = ref.id.toLowerCase();
    const haystack = text.toLowerCase();
    let from = 0;
    while (true) {
      const at = haystack.indexOf(needle, from);
      if (at < 0) break;
      spans.push({ start: at, end: at + needle.length, id: ref.id, description: ref.description });
      from = at + needle.length;
    }
  }
  spans.sort((a, b) => a.start - b.start);
  let cursor = 0;
  for (const span of spans) {
    if (span.start < cursor) continue; // overlapping match already rendered
    if (span.start > cursor) {
      container.append(document.createTextNode(text.slice(cursor, span.start)));
    }
    const mark = el("mark", "vuln-id", text.slice(span.start, span.end));
    mark.setAttribute("data-vuln-id", span.id);
    if (span.description) {
      mark.title = span.description;
    }
    container.append(mark);
    cursor = span.end;
  }
  if (cursor < text.length) {
    container.append(document.createTextNode(text.slice(cursor)));
  }
  return container;
}

/** Inspector for the refined query: highlighted ids, entity chips, sub-queries. */
export function renderRefinement(refined: RefinedQuery | null): HTMLElement {
  const details = el("details", "refinement");
  details.append(el("summary", "refinement-summary", "Query refinement"));
  if (refined === null) {
    details.append(el("div", "refinement-empty", "no refinement data"));
    return details;
  }
  const enriched =
    refined.vuln_ids.length > 0 || refined.entities.length > 0 || refined.expanded.length > 1;
  if (enriched) {
    details.setAttribute("open", "");
  }
  details.append(highlightedSubstituted(refined));

  if (refined.entities.length > 0) {
    const chips = el("div", "entity-chips");
    for (const entity of refined.entities) {
      const chip = el("span", `entity-chip entity-${entity.label.toLowerCase()}`, entity.surface);
      chip.setAttribute("data-label", entity.label);
      chips.append(chip);
    }
    details.append(chips);
  }

  const list = el("ol", "expanded-queries");
  for (const query of refined.expanded) {
    list.append(el("li", "expanded-query", query));
  }
  details.append(list);
  return details;
}
