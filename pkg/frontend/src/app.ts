import { ApiClient } from "./api.js";
import { loadComparison } from "./comparison.js";
import { loadQueue } from "./queue.js";
import { renderVerdictForm } from "./verdict.js";

const QUEUE_POLL_MS = 15_000;

/** Hash-routed single-page app: #/queue (default) and #/session/<id>. */
export class App {
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  start(): void {
    window.addEventListener("hashchange", () => {
      void this.route();
    });
    void this.route();
  }

  async route(): Promise<void> {
    this.stopPolling();
    const hash = window.location.hash;
    const sessionMatch = /^#\/session\/(.+)$/.exec(hash);
    if (sessionMatch) {
      await this.showComparison(decodeURIComponent(sessionMatch[1]));
    } else {
      await this.showQueue();
    }
  }

  async showQueue(): Promise<void> {
    this.root.innerHTML = "";
    const banner = document.createElement("div");
    banner.className = "banner";
    const queueEl = document.createElement("div");
    queueEl.id = "queue";
    this.root.appendChild(banner);
    this.root.appendChild(queueEl);

    const refresh = async () => {
      try {
        await loadQueue(this.client, queueEl, {
          onOpen: (sessionId) => {
            window.location.hash = `#/session/${encodeURIComponent(sessionId)}`;
          },
        });
        banner.textContent = "";
        banner.className = "banner";
      } catch {
        // show stale data as stale, never as fresh
        banner.textContent = "service unreachable, retrying...";
        banner.className = "banner banner-error";
      }
    };
    await refresh();
    this.pollTimer = setInterval(() => {
      void refresh();
    }, QUEUE_POLL_MS);
  }

  async showComparison(sessionId: string): Promise<void> {
    this.root.innerHTML = "";
    const back = document.createElement("a");
    back.href = "#/queue";
    back.textContent = "< back to queue";
    this.root.appendChild(back);

    const comparisonEl = document.createElement("div");
    comparisonEl.id = "comparison";
    this.root.appendChild(comparisonEl);
    const verdictEl = document.createElement("div");
    verdictEl.id = "verdict";
    this.root.appendChild(verdictEl);

    try {
      const { current } = await loadComparison(
        this.client,
        comparisonEl,
        sessionId,
        {
          onOpenCandidate: (candidate) => {
            window.location.hash = `#/session/${encodeURIComponent(candidate)}`;
          },
        },
      );
      if (current.flag && current.flag.status === "pending") {
        renderVerdictForm(verdictEl, this.client, sessionId, {
          onReviewed: () => {
            window.location.hash = "#/queue";
          },
        });
      } else if (current.flag) {
        const done = document.createElement("p");
        done.textContent = `verdict: ${current.flag.status}`;
        verdictEl.appendChild(done);
      }
    } catch {
      const missing = document.createElement("p");
      missing.className = "empty-state";
      missing.textContent = `session ${sessionId} not found`;
      comparisonEl.appendChild(missing);
    }
  }

  stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }
}
