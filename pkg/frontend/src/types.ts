// Wire types mirroring the detection service API.

export interface MatchCandidate {
  session_id: string;
  user_id: string;
  similarity: number;
  rank: number;
}

export interface FlagRecord {
  session_id: string;
  matches: MatchCandidate[];
  created_seq: number;
  created_at_ms: number;
  status: "pending" | "confirmed" | "cleared";
  note: string;
}

export interface QueuePayload {
  flags: FlagRecord[];
  pending_total: number;
}

export interface SessionDetail {
  session_id: string;
  user_id: string;
  started_at_ms: number;
  keyboard_layout: string;
  mouse_kind: string;
  region: string;
  gender: string;
  age_band: string;
  thumbnail_ref: string;
  usable_for_keystroke: boolean;
  usable_for_mouse: boolean;
  seq: number;
  flag: FlagRecord | null;
}

export interface RelatedPayload {
  candidates: MatchCandidate[];
}

export interface ApiError {
  code: string;
  message: string;
}

export type Verdict = "confirmed" | "cleared";
