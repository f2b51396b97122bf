/** Half-open per-lead sample intervals, end-exclusive, matching the
 * service's mask convention exactly. */

export interface Interval {
  lead: number;
  start: number;
  end: number; // exclusive
}

export interface TimeScale {
  /** pixel x of the left edge of sample 0 */
  originPx: number;
  /** pixels per sample (zoom level) */
  pxPerSample: number;
  /** samples per lead */
  T: number;
}

export function pixelToSample(scale: TimeScale, px: number): number {
  const s = Math.round((px - scale.originPx) / scale.pxPerSample);
  return Math.min(scale.T, Math.max(0, s));
}

export function sampleToPixel(scale: TimeScale, sample: number): number {
  return scale.originPx + sample * scale.pxPerSample;
}

/** Merge overlapping or touching intervals on the same lead. */
export function mergeIntervals(intervals: Interval[]): Interval[] {
  const byLead = new Map<number, Interval[]>();
  for (const iv of intervals) {
    if (iv.end <= iv.start) continue;
    const list = byLead.get(iv.lead) ?? [];
    list.push(iv);
    byLead.set(iv.lead, list);
  }
  const out: Interval[] = [];
  for (const [lead, list] of [...byLead.entries()].sort((a, b) => a[0] - b[0])) {
    list.sort((a, b) => a.start - b.start);
    let cur: Interval | null = null;
    for (const iv of list) {
      if (cur !== null && iv.start <= cur.end) {
        cur = { lead, start: cur.start, end: Math.max(cur.end, iv.end) };
      } else {
        if (cur) out.push(cur);
        cur = { ...iv };
      }
    }
    if (cur) out.push(cur);
  }
  return out;
}

/** Convert a drag in pixel space to a draft interval and merge it in.
 * A zero-width selection (after snapping) is ignored. */
export function dragSelect(
  drafts: Interval[],
  lead: number,
  scale: TimeScale,
  pxA: number,
  pxB: number,
): Interval[] {
  const a = pixelToSample(scale, Math.min(pxA, pxB));
  const b = pixelToSample(scale, Math.max(pxA, pxB));
  if (b <= a) return drafts;
  return mergeIntervals([...drafts, { lead, start: a, end: b }]);
}

/** Click on an existing draft removes it; clicks elsewhere are no-ops. */
export function removeAt(drafts: Interval[], lead: number, sample: number): Interval[] {
  return drafts.filter(
    (iv) => !(iv.lead === lead && iv.start <= sample && sample < iv.end),
  );
}

export function validIntervals(drafts: Interval[], L: number, T: number): boolean {
  return drafts.every(
    (iv) =>
      Number.isInteger(iv.lead) && iv.lead >= 0 && iv.lead < L &&
      Number.isInteger(iv.start) && Number.isInteger(iv.end) &&
      iv.start >= 0 && iv.start < iv.end && iv.end <= T,
  );
}
