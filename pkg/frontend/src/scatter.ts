/** SVG rendering of a task's server-side 2-D projection, with the claimed
 * task highlighted against the previously seen points. The projection is
 * computed by the service; this module only draws it. */

export interface ScatterPoint {
  x: number;
  y: number;
  /** "current" renders highlighted; anything else is context. */
  kind: "current" | "seen";
  label?: string;
}

export interface ScatterOptions {
  /** Canvas size in CSS pixels. Default: 220. */
  size?: number;
  /** Padding inside the frame. Default: 14. */
  padding?: number;
}

/** Returns a standalone <svg> string; pure so it is testable without a DOM. */
export function renderScatterSvg(points: ScatterPoint[], options: ScatterOptions = {}): string {
  const size = options.size ?? 220;
  const pad = options.padding ?? 14;
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const lo = (vs: number[]) => (vs.length ? Math.min(...vs) : -1);
  const hi = (vs: number[]) => (vs.length ? Math.max(...vs) : 1);
  const xLo = lo(xs), xHi = hi(xs), yLo = lo(ys), yHi = hi(ys);
  const xSpan = xHi - xLo || 1;
  const ySpan = yHi - yLo || 1;
  const sx = (x: number) => pad + ((x - xLo) / xSpan) * (size - 2 * pad);
  const sy = (y: number) => size - pad - ((y - yLo) / ySpan) * (size - 2 * pad);

  const circles = points
    .map((p) => {
      const cx = sx(p.x).toFixed(1);
      const cy = sy(p.y).toFixed(1);
      if (p.kind === "current") {
        return `<circle cx="${cx}" cy="${cy}" r="6" class="pt-current"><title>${p.label ?? ""}</title></circle>`;
      }
      return `<circle cx="${cx}" cy="${cy}" r="2.5" class="pt-seen"/>`;
    })
    .join("");
  return (
    `<svg viewBox="0 0 ${size} ${size}" width="${size}" height="${size}" role="img">` +
    `<rect x="0.5" y="0.5" width="${size - 1}" height="${size - 1}" class="frame"/>` +
    circles +
    `</svg>`
  );
}

/** Raw feature values as a compact grid of fixed-width readouts. */
export function featureReadout(features: number[] | null): string[] {
  if (!features) return [];
  return features.map((v, i) => `f${i.toString().padStart(2, "0")} ${v >= 0 ? " " : ""}${v.toFixed(3)}`);
}
