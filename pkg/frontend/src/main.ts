/** Application shell: pending queue, lead panels, label decisions, note,
 * submit.  Keyboard: "c" = confirm all labels, "n" = next example. */

import { ApiClient, ApiError, ExampleDetail } from "./api.js";
import {
  AnnotationSession,
  DECISIONS,
  Decision,
  canSubmit,
  confirmAll,
  newSession,
  toFeedbackBody,
  withDecision,
  withDrag,
  withNote,
  withRemoveAt,
} from "./session.js";
import { pixelToSample } from "./intervals.js";
import { renderLeads, timeScaleFor } from "./render.js";

const api = new ApiClient();

interface AppState {
  session: AnnotationSession | null;
  pending: string[];
  status: string;
}

const state: AppState = { session: null, pending: [], status: "" };

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

async function refreshQueue(): Promise<void> {
  const listing = await api.listExamples("pending", 200);
  state.pending = listing.examples.map((e) => e.id);
  $("queue-count").textContent =
    `${listing.n_pending} pending / ${listing.n_completed} done`;
}

async function openExample(id: string): Promise<void> {
  const detail = await api.getExample(id);
  state.session = newSession(detail);
  state.status = "";
  draw();
}

async function openNext(): Promise<void> {
  await refreshQueue();
  const currentId = state.session?.example.id;
  const next = state.pending.find((id) => id !== currentId);
  if (next) {
    await openExample(next);
  } else {
    state.session = null;
    state.status = "Queue empty — all examples have feedback.";
    draw();
  }
}

function update(next: AnnotationSession): void {
  state.session = next;
  draw();
}

async function submit(): Promise<void> {
  const s = state.session;
  if (!s || !canSubmit(s)) return;
  try {
    const stored = await api.submitFeedback(s.example.id, toFeedbackBody(s, "ui"));
    state.status = `Saved revision ${stored.revision}.`;
    await openNext();
  } catch (err) {
    // 422: show the server's named violation, keep the draft intact
    state.status = err instanceof ApiError
      ? `Rejected: ${err.detail}`
      : `Network failure — draft kept, try again. (${String(err)})`;
    draw();
  }
}

function drawLabels(detail: ExampleDetail, s: AnnotationSession): void {
  const host = $("labels");
  host.textContent = "";
  detail.label_names.forEach((name, j) => {
    const row = document.createElement("div");
    row.className = "label-row";
    const truth = detail.labels[j] === 1 ? "present" : "absent";
    const predicted = detail.predicted_labels.includes(name) ? " (predicted)" : "";
    const caption = document.createElement("span");
    caption.textContent = `${name}: ${truth}${predicted} `;
    row.appendChild(caption);
    const select = document.createElement("select");
    for (const d of DECISIONS) {
      const opt = document.createElement("option");
      opt.value = d;
      opt.textContent = d;
      opt.selected = s.labelDecisions[name] === d;
      select.appendChild(opt);
    }
    select.addEventListener("change", () =>
      update(withDecision(state.session!, name, select.value as Decision)),
    );
    row.appendChild(select);
    host.appendChild(row);
  });
}

function draw(): void {
  $("status").textContent = state.status;
  const s = state.session;
  const panel = $("panels");
  if (!s) {
    panel.textContent = "";
    $("labels").textContent = "";
    ($("submit") as HTMLButtonElement).disabled = true;
    return;
  }
  $("example-id").textContent = s.example.id;
  const scale = timeScaleFor(s.example.T);
  renderLeads(panel, s.example, s.drafts, {
    onDrag: (lead, a, b) => update(withDrag(state.session!, lead, scale, a, b)),
    onClick: (lead, px) =>
      update(withRemoveAt(state.session!, lead, pixelToSample(scale, px))),
  });
  drawLabels(s.example, s);
  const note = $("note") as HTMLTextAreaElement;
  if (note.value !== s.note) note.value = s.note;
  ($("submit") as HTMLButtonElement).disabled = !canSubmit(s);
}

function bind(): void {
  ($("submit") as HTMLButtonElement).addEventListener("click", () => void submit());
  ($("next") as HTMLButtonElement).addEventListener("click", () => void openNext());
  ($("note") as HTMLTextAreaElement).addEventListener("input", (e) =>
    update(withNote(state.session!, (e.target as HTMLTextAreaElement).value)),
  );
  document.addEventListener("keydown", (e) => {
    if (e.target instanceof HTMLTextAreaElement || e.target instanceof HTMLInputElement) return;
    if (e.key === "c" && state.session) update(confirmAll(state.session));
    if (e.key === "n") void openNext();
  });
}

async function start(): Promise<void> {
  bind();
  await openNext();
}

void start();
