import { ApiClient, formatSimilarity, formatTimestamp } from "./api.js";
import type { FlagRecord, QueuePayload, SessionDetail } from "./types.js";

export interface QueueHandlers {
  onOpen(sessionId: string): void;
}

/** Render the pending-flag queue exactly in server order: the similarity
 * ranking is server truth and the client never re-sorts it. */
export function renderQueue(
  el: HTMLElement,
  payload: QueuePayload,
  sessions: Map<string, SessionDetail>,
  handlers: QueueHandlers,
): void {
  el.innerHTML = "";
  const heading = document.createElement("h2");
  heading.textContent = `Pending flags (${payload.pending_total})`;
  el.appendChild(heading);

  if (payload.flags.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No pending flags.";
    el.appendChild(empty);
    return;
  }

  const list = document.createElement("div");
  list.className = "flag-list";
  el.appendChild(list);
  for (const flag of payload.flags) {
    list.appendChild(flagCard(flag, sessions.get(flag.session_id), handlers));
  }
}

function flagCard(
  flag: FlagRecord,
  detail: SessionDetail | undefined,
  handlers: QueueHandlers,
): HTMLElement {
  const card = document.createElement("article");
  card.className = "flag-card";
  card.dataset.sessionId = flag.session_id;

  const thumb = document.createElement("img");
  thumb.className = "thumb";
  thumb.alt = `camera thumbnail for ${flag.session_id}`;
  thumb.src = detail?.thumbnail_ref ?? "placeholder.svg";
  thumb.onerror = () => {
    thumb.onerror = null;
    thumb.src = "placeholder.svg";
  };
  card.appendChild(thumb);

  const body = document.createElement("div");
  body.className = "card-body";
  card.appendChild(body);

  const title = document.createElement("h3");
  title.textContent = detail
    ? `${detail.user_id} / ${flag.session_id}`
    : flag.session_id;
  body.appendChild(title);

  const meta = document.createElement("p");
  meta.className = "meta";
  meta.textContent = detail
    ? `started ${formatTimestamp(detail.started_at_ms)}`
    : "";
  body.appendChild(meta);

  const badge = document.createElement("span");
  badge.className = "similarity-badge";
  badge.textContent = formatSimilarity(flag.matches[0].similarity);
  body.appendChild(badge);

  const open = document.createElement("button");
  open.textContent = "Investigate";
  open.onclick = () => handlers.onOpen(flag.session_id);
  body.appendChild(open);
  return card;
}

export async function loadQueue(
  client: ApiClient,
  el: HTMLElement,
  handlers: QueueHandlers,
): Promise<QueuePayload> {
  const payload = await client.getQueue();
  const sessions = new Map<string, SessionDetail>();
  await Promise.all(
    payload.flags.map(async (flag) => {
      sessions.set(flag.session_id, await client.getSession(flag.session_id));
    }),
  );
  renderQueue(el, payload, sessions, handlers);
  return payload;
}
