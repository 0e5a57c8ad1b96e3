// pure console state; all ui enabling rules live here so they can be
// tested without a dom.

import type { Progress, QueryDoc } from "./protocol";

export type Phase = "idle" | "active" | "submitting" | "acked";

export class ConsoleState {
  query: QueryDoc | null = null;
  phase: Phase = "idle";
  /** playback position in [0, T). */
  cursor = 0;
  playing = true;
  /** timestep picked for the corrective action, if any. */
  selectedT: number | null = null;
  /** index into action_names, if any. */
  selectedAction: number | null = null;
  progress: Progress | null = null;
  banner: string | null = null;

  get frameCount(): number {
    return this.query ? this.query.frames.length : 0;
  }

  loadQuery(query: QueryDoc): void {
    this.query = query;
    this.phase = "active";
    this.cursor = 0;
    this.playing = true;
    this.selectedT = null;
    this.selectedAction = null;
    this.banner = null;
  }

  clearQuery(): void {
    this.query = null;
    this.phase = "idle";
    this.cursor = 0;
    this.selectedT = null;
    this.selectedAction = null;
  }

  setCursor(t: number): void {
    if (!this.query) return;
    this.cursor = Math.min(Math.max(0, Math.trunc(t)), this.frameCount - 1);
  }

  /** advance playback by one frame, wrapping at the end. */
  tick(): void {
    if (!this.query || !this.playing) return;
    this.cursor = (this.cursor + 1) % this.frameCount;
  }

  selectTimestep(t: number): void {
    if (this.phase !== "active") return;
    this.selectedT = Math.min(Math.max(0, Math.trunc(t)), this.frameCount - 1);
  }

  selectAction(index: number): void {
    if (this.phase !== "active" || !this.query) return;
    if (index < 0 || index >= this.query.action_names.length) return;
    this.selectedAction = index;
  }

  /** submit needs both a timestep and an action on an active query. */
  get canSubmit(): boolean {
    return (
      this.phase === "active" &&
      this.selectedT !== null &&
      this.selectedAction !== null
    );
  }

  /** pass is always available on an active query. */
  get canPass(): boolean {
    return this.phase === "active";
  }

  beginSubmit(): void {
    this.phase = "submitting";
    this.banner = null;
  }

  /** server took the outcome; controls stay dead until the next query. */
  ackSubmit(): void {
    this.phase = "acked";
    this.selectedT = null;
    this.selectedAction = null;
  }

  /** server refused; keep playback and selection so the user can fix it. */
  rejectSubmit(reason: string): void {
    this.phase = "active";
    this.banner = reason;
  }
}
