// dom construction and frame drawing. the view is a dumb projection of
// ConsoleState; all interaction is forwarded to controller callbacks.

import {
  isHighwayFrame,
  type Frame,
  type GridFrame,
  type HighwayFrame,
} from "./protocol";
import type { ConsoleState } from "./state";

const TEMPLATE = `
  <header class="bar">
    <span id="status">connecting</span>
    <span id="segment"></span>
  </header>
  <div id="banner" class="banner" hidden></div>
  <canvas id="canvas" width="640" height="240"></canvas>
  <div class="playback">
    <button id="play" type="button">pause</button>
    <input id="scrubber" type="range" min="0" max="0" value="0" step="1" />
    <span id="frame-readout">frame 0 / 0</span>
  </div>
  <div class="frame-info">
    executed: <strong id="executed">-</strong>
    <button id="mark" type="button">label this frame</button>
    <span id="selection">no timestep selected</span>
  </div>
  <div id="actions" class="actions"></div>
  <div class="outcome">
    <button id="submit" type="button" disabled>submit label</button>
    <button id="pass" type="button" disabled>pass segment</button>
  </div>
`;

export interface Handlers {
  onScrub(t: number): void;
  onTogglePlay(): void;
  onMark(): void;
  onAction(index: number): void;
  onSubmit(): void;
  onPass(): void;
}

export class View {
  readonly status: HTMLElement;
  readonly segment: HTMLElement;
  readonly banner: HTMLElement;
  readonly canvas: HTMLCanvasElement;
  readonly play: HTMLButtonElement;
  readonly scrubber: HTMLInputElement;
  readonly frameReadout: HTMLElement;
  readonly executed: HTMLElement;
  readonly mark: HTMLButtonElement;
  readonly selection: HTMLElement;
  readonly actions: HTMLElement;
  readonly submit: HTMLButtonElement;
  readonly pass: HTMLButtonElement;

  private laneCount = 1;

  constructor(root: HTMLElement) {
    root.innerHTML = TEMPLATE;
    const grab = <T extends HTMLElement>(id: string): T => {
      const el = root.querySelector<T>(`#${id}`);
      if (!el) throw new Error(`missing console element #${id}`);
      return el;
    };
    this.status = grab("status");
    this.segment = grab("segment");
    this.banner = grab("banner");
    this.canvas = grab<HTMLCanvasElement>("canvas");
    this.play = grab<HTMLButtonElement>("play");
    this.scrubber = grab<HTMLInputElement>("scrubber");
    this.frameReadout = grab("frame-readout");
    this.executed = grab("executed");
    this.mark = grab<HTMLButtonElement>("mark");
    this.selection = grab("selection");
    this.actions = grab("actions");
    this.submit = grab<HTMLButtonElement>("submit");
    this.pass = grab<HTMLButtonElement>("pass");
  }

  bind(handlers: Handlers): void {
    this.scrubber.addEventListener("input", () => {
      handlers.onScrub(Number(this.scrubber.value));
    });
    this.play.addEventListener("click", handlers.onTogglePlay);
    this.mark.addEventListener("click", handlers.onMark);
    this.submit.addEventListener("click", handlers.onSubmit);
    this.pass.addEventListener("click", handlers.onPass);
    this.actions.addEventListener("click", (ev) => {
      const btn = (ev.target as HTMLElement).closest("button[data-index]");
      if (btn) handlers.onAction(Number((btn as HTMLElement).dataset.index));
    });
  }

  /** rebuild the action legend in the server-provided order. */
  setActions(names: string[]): void {
    this.actions.innerHTML = "";
    names.forEach((name, i) => {
      const btn = document.createElement("button");
      btn.type = "button";
      btn.dataset.index = String(i);
      btn.textContent = `${i + 1} ${name}`;
      this.actions.appendChild(btn);
    });
  }

  sync(state: ConsoleState): void {
    const q = state.query;
    const p = state.progress;
    this.status.textContent = p
      ? `${p.status} | iter ${p.iteration}/${p.total_iters}` +
        ` | segments ${p.segments_done}/${p.segments_total}` +
        ` | labels ${p.labels_total}`
      : state.phase === "idle"
        ? "waiting for the trainer"
        : "";
    this.segment.textContent = q ? `segment ${q.segment_id}` : "no query";

    this.banner.hidden = state.banner === null;
    this.banner.textContent = state.banner ?? "";

    const n = state.frameCount;
    this.scrubber.max = String(Math.max(0, n - 1));
    this.scrubber.value = String(state.cursor);
    this.scrubber.disabled = q === null;
    this.frameReadout.textContent = q
      ? `frame ${state.cursor + 1} / ${n}`
      : "frame 0 / 0";
    this.play.textContent = state.playing ? "pause" : "play";
    this.play.disabled = q === null;

    const frame = q ? q.frames[state.cursor] : null;
    this.executed.textContent = frame ? frame.executed_action : "-";
    this.mark.disabled = state.phase !== "active";

    if (state.selectedT === null) {
      this.selection.textContent = "no timestep selected";
    } else {
      const name =
        state.selectedAction !== null && q
          ? ` -> ${q.action_names[state.selectedAction]}`
          : "";
      this.selection.textContent = `t = ${state.selectedT}${name}`;
    }

    const buttons = this.actions.querySelectorAll<HTMLButtonElement>("button");
    buttons.forEach((btn, i) => {
      btn.disabled = state.phase !== "active";
      btn.classList.toggle("selected", state.selectedAction === i);
    });

    this.submit.disabled = !state.canSubmit;
    this.pass.disabled = !state.canPass;

    if (frame) this.drawFrame(frame);
    else this.clearCanvas();
  }

  /** lane count is fixed per query so the road does not jump between frames. */
  prepareQuery(frames: Frame[]): void {
    let lanes = 1;
    for (const f of frames) {
      if (!isHighwayFrame(f)) continue;
      lanes = Math.max(lanes, f.ego.lane + 1);
      for (const v of f.vehicles) lanes = Math.max(lanes, v.lane + 1);
    }
    this.laneCount = lanes;
  }

  private context(): CanvasRenderingContext2D | null {
    // jsdom has no canvas backend; drawing is skipped there
    return this.canvas.getContext ? this.canvas.getContext("2d") : null;
  }

  private clearCanvas(): void {
    const ctx = this.context();
    if (!ctx) return;
    ctx.fillStyle = "#1b1e24";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
  }

  private drawFrame(frame: Frame): void {
    const ctx = this.context();
    if (!ctx) return;
    this.clearCanvas();
    if (isHighwayFrame(frame)) this.drawHighway(ctx, frame);
    else this.drawGrid(ctx, frame);
    ctx.fillStyle = "#e8e8e8";
    ctx.font = "14px monospace";
    ctx.fillText(frame.executed_action, 8, 18);
  }

  private drawHighway(
    ctx: CanvasRenderingContext2D,
    frame: HighwayFrame,
  ): void {
    const W = this.canvas.width;
    const H = this.canvas.height;
    const pad = 24;
    const laneH = (H - 2 * pad) / this.laneCount;
    const scale = 4; // px per meter
    const sx = (x: number) => W * 0.3 + (x - frame.ego.x) * scale;
    const sy = (lane: number) => pad + lane * laneH;

    ctx.fillStyle = "#3a3f47";
    ctx.fillRect(0, pad, W, this.laneCount * laneH);
    ctx.strokeStyle = "#9aa0a6";
    ctx.setLineDash([12, 10]);
    for (let k = 1; k < this.laneCount; k++) {
      ctx.beginPath();
      ctx.moveTo(0, sy(k));
      ctx.lineTo(W, sy(k));
      ctx.stroke();
    }
    ctx.setLineDash([]);

    const carW = 5 * scale;
    const carH = laneH * 0.55;
    const drawCar = (lane: number, x: number, color: string) => {
      ctx.fillStyle = color;
      ctx.fillRect(
        sx(x) - carW / 2,
        sy(lane) + (laneH - carH) / 2,
        carW,
        carH,
      );
    };
    for (const v of frame.vehicles) drawCar(v.lane, v.x, "#7f8fa6");
    drawCar(frame.ego.lane, frame.ego.x, "#4cc38a");
    ctx.fillStyle = "#e8e8e8";
    ctx.font = "12px monospace";
    ctx.fillText(
      `${frame.ego.speed.toFixed(1)} m/s`,
      sx(frame.ego.x) - carW / 2,
      sy(frame.ego.lane) - 4,
    );
  }

  private drawGrid(
    ctx: CanvasRenderingContext2D,
    frame: GridFrame,
  ): void {
    const n = frame.grid;
    const size = Math.min(this.canvas.width, this.canvas.height) - 16;
    const cell = size / n;
    const ox = (this.canvas.width - size) / 2;
    const oy = 8;
    ctx.strokeStyle = "#555b63";
    for (let r = 0; r <= n; r++) {
      ctx.beginPath();
      ctx.moveTo(ox, oy + r * cell);
      ctx.lineTo(ox + size, oy + r * cell);
      ctx.stroke();
      ctx.beginPath();
      ctx.moveTo(ox + r * cell, oy);
      ctx.lineTo(ox + r * cell, oy + size);
      ctx.stroke();
    }
    const fill = (rc: [number, number], color: string) => {
      ctx.fillStyle = color;
      ctx.fillRect(ox + rc[1] * cell + 1, oy + rc[0] * cell + 1,
                   cell - 2, cell - 2);
    };
    for (const c of frame.cliff) fill(c, "#b3423a");
    fill(frame.goal, "#3f8f5f");
    ctx.fillStyle = "#4cc38a";
    ctx.beginPath();
    ctx.arc(
      ox + frame.pos[1] * cell + cell / 2,
      oy + frame.pos[0] * cell + cell / 2,
      cell * 0.3,
      0,
      Math.PI * 2,
    );
    ctx.fill();
  }
}
