// Typed mirror of the engine's /v1/query and /v1/health response schemas.
// The UI derives all of its state from these payloads; nothing is computed
// client-side that the engine already decided.

export type CascadePath = "structured" | "unstructured" | "none";

export type Zone = "code" | "question" | "info";

export interface ContextSegment {
  zone: Zone;
  retriever_id: string;
  score: number;
  chunk_id: string;
  text?: string;
}

export interface Diagnostic {
  retriever_id: string;
  hits: number;
  elapsed_ms?: number;
  error?: string;
}

export interface VulnRef {
  kind: "CVE" | "CWE";
  id: string;
  description: string | null;
}

export interface EntityRef {
  surface: string;
  label: "PER" | "OBJ_CON" | "OTHER";
  span: [number, number];
}

export interface RefinedQuery {
  original: string;
  substituted: string;
  vuln_ids: VulnRef[];
  entities: EntityRef[];
  expanded: string[];
}

export interface QueryResponse {
  answer: string;
  path: CascadePath;
  context_segments?: ContextSegment[];
  diagnostics: Diagnostic[];
  refined: RefinedQuery | null;
}

export interface HealthResponse {
  status: "ok" | "loading" | "empty";
  kb_partitions: string[];
  backend_reachability: Record<string, boolean>;
}

export interface ConversationTurn {
  queryText: string;
  envelope: QueryResponse;
  timestamp: number;
}
