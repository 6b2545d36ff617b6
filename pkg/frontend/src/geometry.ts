// Canvas-free layout and hit-testing so the interaction logic is unit
// testable. Tiers are laid out deterministically by role: managers on top,
// stores in the middle band, generators left, workers right.

import type { GraphDoc, TierType } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export const TIER_RADIUS = 26;

const BAND: Record<TierType, number> = { GMT: 0.15, DST: 0.5, DGT: 0.82, DWT: 0.82 };

export function layout(doc: GraphDoc, width: number, height: number): Map<string, Point> {
  const positions = new Map<string, Point>();
  const byBand = new Map<number, string[]>();
  for (const tier of doc.tiers) {
    const band = BAND[tier.type];
    const key = tier.type === "DGT" ? -band : band; // generators get their own row edge
    const bucket = byBand.get(key) ?? [];
    bucket.push(tier.name);
    byBand.set(key, bucket);
  }
  for (const [key, names] of byBand) {
    const y = Math.abs(key) * height;
    const sorted = [...names].sort();
    sorted.forEach((name, i) => {
      const x = ((i + 1) / (sorted.length + 1)) * width;
      const tier = doc.tiers.find((t) => t.name === name)!;
      const offset = key < 0 ? -0.18 * height : tier.type === "DWT" ? 0 : 0;
      positions.set(name, { x, y: y + offset });
    });
  }
  return positions;
}

export function hitTest(
  positions: Map<string, Point>,
  point: Point,
  radius = TIER_RADIUS,
): string | null {
  let best: string | null = null;
  let bestDist = Infinity;
  for (const [name, pos] of positions) {
    const dx = pos.x - point.x;
    const dy = pos.y - point.y;
    const dist = Math.hypot(dx, dy);
    if (dist <= radius && dist < bestDist) {
      best = name;
      bestDist = dist;
    }
  }
  return best;
}

// Polygon outlines for the server-assigned shape names; a circle returns
// null and is drawn with arc().
export function shapePoints(shape: string, center: Point, r: number): Point[] | null {
  const polygon = (n: number, rotate = -Math.PI / 2): Point[] =>
    Array.from({ length: n }, (_, i) => ({
      x: center.x + r * Math.cos(rotate + (2 * Math.PI * i) / n),
      y: center.y + r * Math.sin(rotate + (2 * Math.PI * i) / n),
    }));
  switch (shape) {
    case "circle":
      return null;
    case "square": {
      const h = r * Math.SQRT1_2; // corners on the same radius as other shapes
      return [
        { x: center.x - h, y: center.y - h },
        { x: center.x + h, y: center.y - h },
        { x: center.x + h, y: center.y + h },
        { x: center.x - h, y: center.y + h },
      ];
    }
    case "triangle":
      return polygon(3);
    case "diamond":
      return polygon(4);
    case "hexagon":
      return polygon(6);
    case "star": {
      const points: Point[] = [];
      for (let i = 0; i < 10; i++) {
        const radius = i % 2 === 0 ? r : r / 2.2;
        const angle = -Math.PI / 2 + (Math.PI * i) / 5;
        points.push({
          x: center.x + radius * Math.cos(angle),
          y: center.y + radius * Math.sin(angle),
        });
      }
      return points;
    }
    default:
      return null;
  }
}
