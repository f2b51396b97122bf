/** Draft annotation state for one example: intervals, label decisions,
 * note, dirty flag.  Pure functions so every transition is testable. */

import type { ExampleDetail, FeedbackBody } from "./api.js";
import {
  Interval,
  TimeScale,
  dragSelect,
  removeAt,
  validIntervals,
} from "./intervals.js";

export const DECISIONS = ["untouched", "confirm", "add", "remove"] as const;
export type Decision = (typeof DECISIONS)[number];

export interface AnnotationSession {
  example: ExampleDetail;
  drafts: Interval[];
  labelDecisions: Record<string, Decision>;
  note: string;
  dirty: boolean;
}

export function newSession(example: ExampleDetail): AnnotationSession {
  const labelDecisions: Record<string, Decision> = {};
  for (const name of example.label_names) labelDecisions[name] = "untouched";
  return { example, drafts: [], labelDecisions, note: "", dirty: false };
}

export function withDrag(
  s: AnnotationSession,
  lead: number,
  scale: TimeScale,
  pxA: number,
  pxB: number,
): AnnotationSession {
  const drafts = dragSelect(s.drafts, lead, scale, pxA, pxB);
  return drafts === s.drafts ? s : { ...s, drafts, dirty: true };
}

export function withRemoveAt(
  s: AnnotationSession,
  lead: number,
  sample: number,
): AnnotationSession {
  const drafts = removeAt(s.drafts, lead, sample);
  return drafts.length === s.drafts.length ? s : { ...s, drafts, dirty: true };
}

/** Every decision other than "untouched" is an explicit user action. */
export function withDecision(
  s: AnnotationSession,
  label: string,
  decision: Decision,
): AnnotationSession {
  if (!(label in s.labelDecisions)) return s;
  return {
    ...s,
    labelDecisions: { ...s.labelDecisions, [label]: decision },
    dirty: true,
  };
}

export function confirmAll(s: AnnotationSession): AnnotationSession {
  const labelDecisions: Record<string, Decision> = {};
  for (const name of s.example.label_names) labelDecisions[name] = "confirm";
  return { ...s, labelDecisions, dirty: true };
}

export function withNote(s: AnnotationSession, note: string): AnnotationSession {
  return { ...s, note, dirty: true };
}

export function isValid(s: AnnotationSession): boolean {
  return validIntervals(s.drafts, s.example.L, s.example.T);
}

export function canSubmit(s: AnnotationSession): boolean {
  return s.dirty && isValid(s);
}

export function toFeedbackBody(
  s: AnnotationSession,
  annotatorId: string,
): FeedbackBody {
  const label_decisions: Record<string, string> = {};
  for (const [name, d] of Object.entries(s.labelDecisions)) {
    if (d !== "untouched") label_decisions[name] = d;
  }
  return {
    annotator_id: annotatorId,
    intervals: s.drafts.map((iv) => [iv.lead, iv.start, iv.end]),
    label_decisions,
    note: s.note,
  };
}
