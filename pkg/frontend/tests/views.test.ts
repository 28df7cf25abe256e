import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, formatSimilarity } from "../src/api.js";
import { renderComparison } from "../src/comparison.js";
import { renderQueue } from "../src/queue.js";
import { renderVerdictForm } from "../src/verdict.js";
import {
  candidate,
  detail,
  fakeFetch,
  flag,
  jsonError,
  queuePayload,
} from "./helpers.js";

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = "<main id='app'></main>";
  root = document.getElementById("app") as HTMLElement;
});

describe("queue view", () => {
  it("shows the empty state", () => {
    renderQueue(root, queuePayload([]), new Map(), { onOpen: () => {} });
    expect(root.querySelector(".empty-state")?.textContent).toBe(
      "No pending flags.",
    );
  });

  it("renders cards exactly in API order, without re-ranking", () => {
    // deliberately NOT sorted by similarity: server order must win
    const flags = [flag("s-low", 0.41, 2), flag("s-high", 0.97, 1),
                   flag("s-mid", 0.63, 3)];
    renderQueue(root, queuePayload(flags), new Map(), { onOpen: () => {} });
    const ids = [...root.querySelectorAll<HTMLElement>(".flag-card")].map(
      (card) => card.dataset.sessionId,
    );
    expect(ids).toEqual(["s-low", "s-high", "s-mid"]);
    const badges = [...root.querySelectorAll(".similarity-badge")].map(
      (badge) => badge.textContent,
    );
    expect(badges).toEqual(["0.4100", "0.9700", "0.6300"]);
  });

  it("opens the comparison when a card is clicked", () => {
    const onOpen = vi.fn();
    renderQueue(root, queuePayload([flag("s1", 0.8)]), new Map(), { onOpen });
    root.querySelector("button")?.click();
    expect(onOpen).toHaveBeenCalledWith("s1");
  });
});

describe("comparison view", () => {
  it("renders candidates in rank order with verbatim badges", () => {
    const related = {
      candidates: [
        candidate("c1", 0.912345, 1),
        candidate("c2", 0.87, 2),
        candidate("c3", 0.531, 3),
      ],
    };
    const details = new Map(
      related.candidates.map((c) => [c.session_id, detail(c.session_id)]),
    );
    renderComparison(root, detail("query"), related, details, {
      onOpenCandidate: () => {},
    });
    const cards = [...root.querySelectorAll<HTMLElement>(".candidate-card")];
    expect(cards.map((c) => c.dataset.sessionId)).toEqual(["c1", "c2", "c3"]);
    expect(cards.map((c) => c.dataset.rank)).toEqual(["1", "2", "3"]);
    const badges = cards.map(
      (c) => c.querySelector(".similarity-badge")?.textContent,
    );
    expect(badges).toEqual(
      related.candidates.map((c) => formatSimilarity(c.similarity)),
    );
  });

  it("routes to a candidate on click", () => {
    const onOpenCandidate = vi.fn();
    const related = { candidates: [candidate("c9", 0.7, 1)] };
    renderComparison(
      root,
      detail("query"),
      related,
      new Map([["c9", detail("c9")]]),
      { onOpenCandidate },
    );
    root.querySelector<HTMLElement>(".candidate-card")?.click();
    expect(onOpenCandidate).toHaveBeenCalledWith("c9");
  });
});

describe("verdict form", () => {
  function submitForm() {
    const form = root.querySelector("form") as HTMLFormElement;
    form.dispatchEvent(new Event("submit", { cancelable: true }));
  }

  function chooseVerdict(value: string) {
    const radio = root.querySelector<HTMLInputElement>(
      `input[value=${value}]`,
    ) as HTMLInputElement;
    radio.checked = true;
    radio.dispatchEvent(new Event("change", { bubbles: true }));
  }

  it("disables submit until a verdict is chosen", () => {
    const { impl } = fakeFetch([["/review", () => flag("s1", 0.9)]]);
    const client = new ApiClient({ baseUrl: "http://svc", fetchImpl: impl });
    renderVerdictForm(root, client, "s1", { onReviewed: () => {} });
    const submit = root.querySelector("button") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
    chooseVerdict("confirmed");
    expect(submit.disabled).toBe(false);
  });

  it("sends exactly one request while in flight", async () => {
    let resolveResponse: (value: Response) => void = () => {};
    const pending = new Promise<Response>((resolve) => {
      resolveResponse = resolve;
    });
    const calls: string[] = [];
    const impl = (async (url: RequestInfo | URL) => {
      calls.push(String(url));
      return pending;
    }) as typeof fetch;
    const client = new ApiClient({ baseUrl: "http://svc", fetchImpl: impl });
    const onReviewed = vi.fn();
    renderVerdictForm(root, client, "s1", { onReviewed });
    chooseVerdict("confirmed");
    submitForm();
    submitForm();  // double click: blocked while in flight
    expect(calls.length).toBe(1);
    resolveResponse(
      new Response(JSON.stringify(flag("s1", 0.9)), { status: 200 }),
    );
    await vi.waitFor(() => expect(onReviewed).toHaveBeenCalledTimes(1));
  });

  it("treats 409 as already reviewed", async () => {
    const { impl } = fakeFetch([
      ["/review", () => jsonError(409, "already_reviewed")],
    ]);
    const client = new ApiClient({ baseUrl: "http://svc", fetchImpl: impl });
    const onReviewed = vi.fn();
    renderVerdictForm(root, client, "s1", { onReviewed });
    chooseVerdict("cleared");
    submitForm();
    await vi.waitFor(() => expect(onReviewed).toHaveBeenCalled());
    expect(root.querySelector(".form-status")?.textContent).toContain(
      "already reviewed",
    );
  });

  it("keeps the form on network failure so the proctor can retry", async () => {
    const impl = (async () => {
      throw new Error("connection refused");
    }) as unknown as typeof fetch;
    const client = new ApiClient({ baseUrl: "http://svc", fetchImpl: impl });
    renderVerdictForm(root, client, "s1", { onReviewed: () => {} });
    chooseVerdict("confirmed");
    const note = root.querySelector("textarea") as HTMLTextAreaElement;
    note.value = "important context";
    submitForm();
    await vi.waitFor(() =>
      expect(root.querySelector(".form-status")?.textContent).toContain(
        "try again",
      ),
    );
    expect((root.querySelector("textarea") as HTMLTextAreaElement).value).toBe(
      "important context",
    );
    expect((root.querySelector("button") as HTMLButtonElement).disabled).toBe(
      false,
    );
  });
});
