/** Saliency heat ramp: linear blue (0,0,255) -> white -> red (255,0,0). */
export function heatColor(v: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, v));
  if (x <= 0.5) {
    const a = x / 0.5;
    return [Math.round(255 * a), Math.round(255 * a), 255];
  }
  const a = (x - 0.5) / 0.5;
  return [255, Math.round(255 * (1 - a)), Math.round(255 * (1 - a))];
}

export function heatCss(v: number): string {
  const [r, g, b] = heatColor(v);
  return `rgb(${r},${g},${b})`;
}
