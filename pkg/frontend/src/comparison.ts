import { ApiClient, formatSimilarity, formatTimestamp } from "./api.js";
import type { MatchCandidate, RelatedPayload, SessionDetail } from "./types.js";

export interface ComparisonHandlers {
  onOpenCandidate(sessionId: string): void;
}

const DETAIL_FIELDS: Array<[string, (d: SessionDetail) => string]> = [
  ["user", (d) => d.user_id],
  ["started", (d) => formatTimestamp(d.started_at_ms)],
  ["keyboard", (d) => d.keyboard_layout],
  ["mouse", (d) => d.mouse_kind],
  ["region", (d) => d.region],
  ["gender", (d) => d.gender],
  ["age band", (d) => d.age_band],
];

function sessionPanel(detail: SessionDetail, label: string): HTMLElement {
  const panel = document.createElement("section");
  panel.className = "session-panel";
  panel.dataset.sessionId = detail.session_id;

  const heading = document.createElement("h3");
  heading.textContent = `${label}: ${detail.session_id}`;
  panel.appendChild(heading);

  const thumb = document.createElement("img");
  thumb.className = "thumb";
  thumb.alt = `camera thumbnail for ${detail.session_id}`;
  thumb.src = detail.thumbnail_ref;
  thumb.onerror = () => {
    thumb.onerror = null;
    thumb.src = "placeholder.svg";
  };
  panel.appendChild(thumb);

  const table = document.createElement("dl");
  table.className = "properties";
  for (const [name, value] of DETAIL_FIELDS) {
    const dt = document.createElement("dt");
    dt.textContent = name;
    const dd = document.createElement("dd");
    dd.textContent = value(detail);
    table.appendChild(dt);
    table.appendChild(dd);
  }
  panel.appendChild(table);
  return panel;
}

/** Current session plus the related-session grid, strictly in the rank
 * order the API returned; badges show the API similarity verbatim. */
export function renderComparison(
  el: HTMLElement,
  current: SessionDetail,
  related: RelatedPayload,
  candidateDetails: Map<string, SessionDetail>,
  handlers: ComparisonHandlers,
): void {
  el.innerHTML = "";
  el.appendChild(sessionPanel(current, "Current session"));

  const grid = document.createElement("div");
  grid.className = "related-grid";
  el.appendChild(grid);
  if (related.candidates.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No related sessions.";
    grid.appendChild(empty);
    return;
  }
  for (const candidate of related.candidates) {
    grid.appendChild(
      candidateCard(candidate, candidateDetails.get(candidate.session_id),
                    handlers),
    );
  }
}

function candidateCard(
  candidate: MatchCandidate,
  detail: SessionDetail | undefined,
  handlers: ComparisonHandlers,
): HTMLElement {
  const card = document.createElement("article");
  card.className = "candidate-card";
  card.dataset.sessionId = candidate.session_id;
  card.dataset.rank = String(candidate.rank);

  const rank = document.createElement("span");
  rank.className = "rank";
  rank.textContent = `#${candidate.rank}`;
  card.appendChild(rank);

  if (detail) {
    const thumb = document.createElement("img");
    thumb.className = "thumb";
    thumb.alt = `camera thumbnail for ${candidate.session_id}`;
    thumb.src = detail.thumbnail_ref;
    thumb.onerror = () => {
      thumb.onerror = null;
      thumb.src = "placeholder.svg";
    };
    card.appendChild(thumb);
  }

  const title = document.createElement("h4");
  title.textContent = `${candidate.user_id} / ${candidate.session_id}`;
  card.appendChild(title);

  const badge = document.createElement("span");
  badge.className = "similarity-badge";
  badge.textContent = formatSimilarity(candidate.similarity);
  card.appendChild(badge);

  card.onclick = () => handlers.onOpenCandidate(candidate.session_id);
  return card;
}

export async function loadComparison(
  client: ApiClient,
  el: HTMLElement,
  sessionId: string,
  handlers: ComparisonHandlers,
  topK = 8,
): Promise<{ current: SessionDetail; related: RelatedPayload }> {
  const [current, related] = await Promise.all([
    client.getSession(sessionId),
    client.getRelated(sessionId, topK),
  ]);
  const details = new Map<string, SessionDetail>();
  await Promise.all(
    related.candidates.map(async (candidate) => {
      details.set(candidate.session_id,
                  await client.getSession(candidate.session_id));
    }),
  );
  renderComparison(el, current, related, details, handlers);
  return { current, related };
}
