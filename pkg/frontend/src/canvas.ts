// Node-link rendering of the tier graph on a 2D canvas, with drag-to-connect
// (editor) and context menus (operator). Colors and shapes are taken verbatim
// from the server-assigned visuals.

import { checkConnection, legalConnectTargets } from "./graphdoc.js";
import { hitTest, layout, Point, shapePoints, TIER_RADIUS } from "./geometry.js";
import type { GraphStore } from "./state.js";

export interface CanvasCallbacks {
  onAddTier?: (point: Point) => void;
  onTierDoubleClick?: (tier: string) => void;
  onTierContextMenu?: (tier: string, x: number, y: number) => void;
  onConnect?: (from: string, to: string) => void;
}

export class GraphCanvas {
  private positions = new Map<string, Point>();
  private dragFrom: string | null = null;
  private dragPoint: Point | null = null;
  private legalTargets = new Set<string>();

  constructor(
    private canvas: HTMLCanvasElement,
    private store: GraphStore,
    private callbacks: CanvasCallbacks,
    private interactive: boolean,
  ) {
    canvas.addEventListener("dblclick", (e) => this.handleDoubleClick(e));
    canvas.addEventListener("contextmenu", (e) => this.handleContextMenu(e));
    canvas.addEventListener("mousedown", (e) => this.handleMouseDown(e));
    canvas.addEventListener("mousemove", (e) => this.handleMouseMove(e));
    canvas.addEventListener("mouseup", (e) => this.handleMouseUp(e));
    store.subscribe(() => this.render());
  }

  private toPoint(e: MouseEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private handleDoubleClick(e: MouseEvent): void {
    if (!this.interactive) return;
    const point = this.toPoint(e);
    const tier = hitTest(this.positions, point);
    if (tier) this.callbacks.onTierDoubleClick?.(tier);
    else this.callbacks.onAddTier?.(point);
  }

  private handleContextMenu(e: MouseEvent): void {
    const tier = hitTest(this.positions, this.toPoint(e));
    if (tier) {
      e.preventDefault();
      this.callbacks.onTierContextMenu?.(tier, e.clientX, e.clientY);
    }
  }

  private handleMouseDown(e: MouseEvent): void {
    if (!this.interactive || e.button !== 0 || !this.store.graph) return;
    const tier = hitTest(this.positions, this.toPoint(e));
    if (tier) {
      this.dragFrom = tier;
      this.dragPoint = this.toPoint(e);
      this.legalTargets = new Set(legalConnectTargets(this.store.graph, tier));
      this.render();
    }
  }

  private handleMouseMove(e: MouseEvent): void {
    if (this.dragFrom) {
      this.dragPoint = this.toPoint(e);
      this.render();
    }
  }

  private handleMouseUp(e: MouseEvent): void {
    if (!this.dragFrom || !this.store.graph) return;
    const target = hitTest(this.positions, this.toPoint(e));
    const from = this.dragFrom;
    this.dragFrom = null;
    this.dragPoint = null;
    // snap only to legal endpoints; anything else cancels the gesture
    if (target && checkConnection(this.store.graph, from, target) === null) {
      this.callbacks.onConnect?.(from, target);
    }
    this.legalTargets.clear();
    this.render();
  }

  render(): void {
    const doc = this.store.graph;
    const visuals = this.store.visuals;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    if (!doc || !visuals) {
      ctx.fillStyle = "#777";
      ctx.font = "14px sans-serif";
      ctx.fillText("no graph loaded", 20, 30);
      return;
    }
    this.positions = layout(doc, width, height);

    ctx.strokeStyle = "#9aa0a6";
    ctx.lineWidth = 1.5;
    for (const conn of doc.connections) {
      const a = this.positions.get(conn.from);
      const b = this.positions.get(conn.to);
      if (!a || !b) continue;
      ctx.beginPath();
      ctx.moveTo(a.x, a.y);
      ctx.lineTo(b.x, b.y);
      ctx.stroke();
    }

    if (this.dragFrom && this.dragPoint) {
      const a = this.positions.get(this.dragFrom);
      if (a) {
        ctx.strokeStyle = "#1a73e8";
        ctx.setLineDash([5, 4]);
        ctx.beginPath();
        ctx.moveTo(a.x, a.y);
        ctx.lineTo(this.dragPoint.x, this.dragPoint.y);
        ctx.stroke();
        ctx.setLineDash([]);
      }
    }

    for (const tier of doc.tiers) {
      const pos = this.positions.get(tier.name);
      if (!pos) continue;
      const color = visuals.tier_colors[tier.name] ?? "#ccc";
      const shape = visuals.tier_shapes[tier.name] ?? "circle";
      const badge = visuals.tier_badges[tier.name] ?? 0;
      const highlight = this.dragFrom !== null && this.legalTargets.has(tier.name);

      ctx.fillStyle = color;
      ctx.strokeStyle = highlight ? "#1a73e8" : "#202124";
      ctx.lineWidth = highlight ? 3 : 1.5;
      const points = shapePoints(shape, pos, TIER_RADIUS);
      ctx.beginPath();
      if (points === null) {
        ctx.arc(pos.x, pos.y, TIER_RADIUS, 0, 2 * Math.PI);
      } else {
        ctx.moveTo(points[0].x, points[0].y);
        for (const p of points.slice(1)) ctx.lineTo(p.x, p.y);
        ctx.closePath();
      }
      ctx.fill();
      ctx.stroke();

      ctx.fillStyle = "#202124";
      ctx.font = "12px sans-serif";
      ctx.textAlign = "center";
      const countSuffix = tier.count > 1 ? ` x${tier.count}` : "";
      ctx.fillText(`${tier.name}${countSuffix}`, pos.x, pos.y + TIER_RADIUS + 14);
      ctx.fillText(tier.type, pos.x, pos.y + 4);
      if (badge > 0) {
        ctx.fillStyle = "#fff";
        ctx.beginPath();
        ctx.arc(pos.x + TIER_RADIUS - 6, pos.y - TIER_RADIUS + 6, 8, 0, 2 * Math.PI);
        ctx.fill();
        ctx.fillStyle = "#202124";
        ctx.fillText(String(badge), pos.x + TIER_RADIUS - 6, pos.y - TIER_RADIUS + 10);
      }
    }
  }
}
