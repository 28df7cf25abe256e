import type {
  FlagRecord,
  MatchCandidate,
  QueuePayload,
  SessionDetail,
} from "../src/types.js";

export function candidate(
  sessionId: string,
  similarity: number,
  rank: number,
  userId = `user-of-${sessionId}`,
): MatchCandidate {
  return { session_id: sessionId, user_id: userId, similarity, rank };
}

export function flag(
  sessionId: string,
  topSimilarity: number,
  seq = 0,
): FlagRecord {
  return {
    session_id: sessionId,
    matches: [candidate(`${sessionId}-match`, topSimilarity, 1)],
    created_seq: seq,
    created_at_ms: 1700000000000 + seq,
    status: "pending",
    note: "",
  };
}

export function detail(sessionId: string, userId?: string): SessionDetail {
  return {
    session_id: sessionId,
    user_id: userId ?? `user-of-${sessionId}`,
    started_at_ms: 1700000000000,
    keyboard_layout: "qwerty-us",
    mouse_kind: "optical",
    region: "eu",
    gender: "female",
    age_band: "21-25",
    thumbnail_ref: `thumbs/${sessionId}.jpg`,
    usable_for_keystroke: true,
    usable_for_mouse: true,
    seq: 0,
    flag: null,
  };
}

export function queuePayload(flags: FlagRecord[]): QueuePayload {
  return { flags, pending_total: flags.length };
}

type Responder = (url: string, init?: RequestInit) => unknown;

/** fetch stub: routes by substring match, records every request. */
export function fakeFetch(routes: Array<[string, Responder]>) {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const impl = async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    calls.push({ url, init });
    for (const [needle, responder] of routes) {
      if (url.includes(needle)) {
        const body = responder(url, init);
        if (body instanceof Response) {
          return body;
        }
        return new Response(JSON.stringify(body), {
          status: 200,
          headers: { "content-type": "application/json" },
        });
      }
    }
    return new Response(JSON.stringify({ code: "not_found", message: url }), {
      status: 404,
      headers: { "content-type": "application/json" },
    });
  };
  return { impl: impl as typeof fetch, calls };
}

export function jsonError(status: number, code: string): Response {
  return new Response(JSON.stringify({ code, message: code }), {
    status,
    headers: { "content-type": "application/json" },
  });
}
