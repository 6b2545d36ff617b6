// Client-side store. Truth lives on the server: every mutation sends the
// whole edited document and replaces local state with the authoritative
// response, so a refresh at any moment reconstructs the identical view.

import { ApiClient } from "./api.js";
import { cloneGraph } from "./graphdoc.js";
import type { Finding, GraphDoc, GraphResponse, StatusDoc, Visuals } from "./types.js";
import { emptyGraph } from "./types.js";

export class GraphStore {
  graph: GraphDoc | null = null;
  visuals: Visuals | null = null;
  findings: Finding[] = [];
  status: StatusDoc | null = null;
  private listeners: (() => void)[] = [];

  constructor(public api: ApiClient) {}

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private accept(response: GraphResponse): void {
    this.graph = response.graph;
    this.visuals = response.visuals;
    this.findings = response.findings;
    this.notify();
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  get valid(): boolean {
    return this.graph !== null && !this.findings.some((f) => f.severity === "error");
  }

  async refresh(): Promise<void> {
    this.accept(await this.api.getGraph());
  }

  async refreshStatus(): Promise<StatusDoc> {
    this.status = await this.api.status();
    this.notify();
    return this.status;
  }

  /** Run a pure edit on a copy of the document, then submit it; the rendered
   * state is whatever the server acknowledged. */
  async edit(mutate: (doc: GraphDoc) => GraphDoc): Promise<void> {
    const base = this.graph ? cloneGraph(this.graph) : emptyGraph();
    const next = mutate(base);
    this.accept(await this.api.putGraph(next));
  }

  async loadText(text: string): Promise<void> {
    this.accept(await this.api.putGraph(text));
  }

  async saveText(): Promise<string> {
    return this.api.graphFileText();
  }
}
