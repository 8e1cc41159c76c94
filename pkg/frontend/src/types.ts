// Mirrors the HTTP service's response bodies exactly; the client adds no
// scoring or resolution logic of its own.

export interface Citation {
  origin: 'local' | 'web';
  ref: string;
}

export interface HitScore {
  chunk_id: string;
  bm25: number;
  cosine: number;
  score: number;
}

export interface ClarificationQuestion {
  attribute: string;
  prompt: string;
  allowed: string[];
}

export interface Clarification {
  questions: ClarificationQuestion[];
}

export interface AskResponse {
  answer: string | null;
  citations: Citation[];
  scores: HitScore[];
  clarification: Clarification | null;
  used_web: boolean;
  session_id: string | null;
}

export interface TranscriptEntry {
  role: 'user' | 'assistant';
  text: string;
  timestamp: number;
}

export interface SessionView {
  id: string;
  tree_id: string;
  state: 'open' | 'diagnosed' | 'expired';
  evidence: Record<string, string>;
  transcript: TranscriptEntry[];
}

export interface ChatTurn {
  role: 'user' | 'assistant';
  body: string;
  citations?: Citation[];
  clarification?: Clarification;
  usedWeb?: boolean;
  sessionId?: string;
  error?: boolean;
}
