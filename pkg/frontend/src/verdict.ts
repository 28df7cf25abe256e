import { ApiClient, ApiRequestError } from "./api.js";
import type { Verdict } from "./types.js";

export interface VerdictHandlers {
  onReviewed(verdict: Verdict): void;
}

/** One-shot verdict form: submit stays disabled until a verdict is chosen,
 * double-submits are blocked while a request is in flight, and a 409 from
 * the server renders the already-reviewed notice. Network failures keep
 * the form intact so the proctor can retry. */
export function renderVerdictForm(
  el: HTMLElement,
  client: ApiClient,
  sessionId: string,
  handlers: VerdictHandlers,
): void {
  el.innerHTML = "";
  const form = document.createElement("form");
  form.className = "verdict-form";
  el.appendChild(form);

  const choices = document.createElement("div");
  choices.className = "verdict-choices";
  form.appendChild(choices);
  for (const verdict of ["confirmed", "cleared"] as Verdict[]) {
    const label = document.createElement("label");
    const radio = document.createElement("input");
    radio.type = "radio";
    radio.name = "verdict";
    radio.value = verdict;
    label.appendChild(radio);
    label.appendChild(document.createTextNode(verdict));
    choices.appendChild(label);
  }

  const note = document.createElement("textarea");
  note.name = "note";
  note.placeholder = "investigation notes";
  form.appendChild(note);

  const submit = document.createElement("button");
  submit.type = "submit";
  submit.textContent = "Record verdict";
  submit.disabled = true;
  form.appendChild(submit);

  const status = document.createElement("p");
  status.className = "form-status";
  form.appendChild(status);

  form.addEventListener("change", () => {
    submit.disabled = !selectedVerdict(form) || inFlight;
  });

  let inFlight = false;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const verdict = selectedVerdict(form);
    if (!verdict || inFlight) {
      return;
    }
    inFlight = true;
    submit.disabled = true;
    status.textContent = "submitting...";
    client
      .submitReview(sessionId, verdict, note.value)
      .then((flag) => {
        status.textContent = `recorded: ${flag.status}`;
        handlers.onReviewed(verdict);
      })
      .catch((error: unknown) => {
        inFlight = false;
        if (error instanceof ApiRequestError && error.status === 409) {
          status.textContent = "already reviewed by another proctor";
          handlers.onReviewed(verdict);
          return;
        }
        // network trouble: keep the filled form, offer retry
        submit.disabled = false;
        status.textContent = "submit failed, try again";
      });
  });
}

function selectedVerdict(form: HTMLFormElement): Verdict | null {
  const checked = form.querySelector<HTMLInputElement>(
    "input[name=verdict]:checked",
  );
  return (checked?.value as Verdict | undefined) ?? null;
}
