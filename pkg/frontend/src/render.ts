/** Stacked per-lead SVG panels: saliency heat strip under the waveform,
 * draft interval overlays, and a seconds axis from sample_rate_hz. */

import { heatCss } from "./color.js";
import type { ExampleDetail } from "./api.js";
import { Interval, TimeScale, sampleToPixel } from "./intervals.js";

export const PANEL = { width: 900, height: 90, gap: 10, left: 60 };

const SVG_NS = "http://www.w3.org/2000/svg";

export function timeScaleFor(T: number): TimeScale {
  return { originPx: PANEL.left, pxPerSample: PANEL.width / T, T };
}

function el<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | number>,
): SVGElementTagNameMap[K] {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, String(v));
  return node;
}

export interface LeadPanelHandlers {
  onDrag?: (lead: number, pxA: number, pxB: number) => void;
  onClick?: (lead: number, px: number) => void;
}

/** Axis ticks in seconds: 0 .. T/rate, at most ~10 labeled ticks. */
export function axisTicks(T: number, rateHz: number): { sample: number; label: string }[] {
  const totalS = T / rateHz;
  const stepS = totalS <= 10 ? Math.max(totalS / 10, 0.1) : Math.ceil(totalS / 10);
  const ticks: { sample: number; label: string }[] = [];
  for (let s = 0; s <= totalS + 1e-9; s += stepS) {
    ticks.push({ sample: Math.round(s * rateHz), label: `${+s.toFixed(2)} s` });
  }
  return ticks;
}

export function renderLeads(
  container: HTMLElement,
  detail: ExampleDetail,
  drafts: Interval[],
  handlers: LeadPanelHandlers = {},
): void {
  container.textContent = "";
  const { L, T } = detail;
  const scale = timeScaleFor(T);
  const svgH = L * (PANEL.height + PANEL.gap) + 40;
  const svg = el("svg", {
    width: PANEL.left + PANEL.width + 20,
    height: svgH,
    "data-role": "leads",
  });

  if (!detail.saliency) {
    const note = document.createElement("p");
    note.className = "notice";
    note.textContent = "No saliency available for this example; showing raw signal only.";
    container.appendChild(note);
  }

  for (let lead = 0; lead < L; lead++) {
    const y0 = lead * (PANEL.height + PANEL.gap);
    const g = el("g", { "data-lead": lead });

    const label = el("text", { x: 4, y: y0 + PANEL.height / 2, "font-size": 12 });
    label.textContent = `lead ${lead}`;
    g.appendChild(label);

    const cellW = PANEL.width / T;
    if (detail.saliency) {
      const row = detail.saliency.values[lead] ?? [];
      for (let t = 0; t < T; t++) {
        g.appendChild(
          el("rect", {
            x: PANEL.left + t * cellW,
            y: y0,
            width: cellW + 0.05,
            height: PANEL.height,
            fill: heatCss(row[t] ?? 0),
            "data-role": "heat",
          }),
        );
      }
    }

    const sig = detail.signal[lead] ?? [];
    const lo = Math.min(...sig);
    const hi = Math.max(...sig);
    const span = hi > lo ? hi - lo : 1;
    const pts = sig
      .map((v, t) => {
        const x = PANEL.left + (t + 0.5) * cellW;
        const y = y0 + PANEL.height - ((v - lo) / span) * PANEL.height;
        return `${x.toFixed(2)},${y.toFixed(2)}`;
      })
      .join(" ");
    g.appendChild(
      el("polyline", { points: pts, fill: "none", stroke: "black", "stroke-width": 1 }),
    );

    for (const iv of drafts.filter((d) => d.lead === lead)) {
      g.appendChild(
        el("rect", {
          x: sampleToPixel(scale, iv.start),
          y: y0,
          width: (iv.end - iv.start) * scale.pxPerSample,
          height: PANEL.height,
          fill: "rgba(50,180,50,0.3)",
          stroke: "green",
          "data-role": "draft",
          "data-start": iv.start,
          "data-end": iv.end,
        }),
      );
    }

    const hit = el("rect", {
      x: PANEL.left,
      y: y0,
      width: PANEL.width,
      height: PANEL.height,
      fill: "transparent",
      "data-role": "hit",
    });
    attachDrag(hit, lead, handlers);
    g.appendChild(hit);
    svg.appendChild(g);
  }

  const axisY = L * (PANEL.height + PANEL.gap) + 14;
  for (const tick of axisTicks(T, detail.sample_rate_hz)) {
    const x = sampleToPixel(scale, tick.sample);
    const t = el("text", { x, y: axisY, "font-size": 10, "text-anchor": "middle" });
    t.textContent = tick.label;
    svg.appendChild(t);
  }

  container.appendChild(svg);
}

function attachDrag(node: SVGRectElement, lead: number, handlers: LeadPanelHandlers): void {
  let downPx: number | null = null;
  let moved = false;
  node.addEventListener("pointerdown", (e) => {
    downPx = (e as PointerEvent).offsetX;
    moved = false;
    node.setPointerCapture((e as PointerEvent).pointerId);
  });
  node.addEventListener("pointermove", (e) => {
    if (downPx !== null && Math.abs((e as PointerEvent).offsetX - downPx) > 2) moved = true;
  });
  node.addEventListener("pointerup", (e) => {
    const upPx = (e as PointerEvent).offsetX;
    if (downPx === null) return;
    if (moved) handlers.onDrag?.(lead, downPx, upPx);
    else handlers.onClick?.(lead, upPx);
    downPx = null;
  });
}
