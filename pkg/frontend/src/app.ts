// controller: owns the poll loop and routes ui events to the service.
// tests drive refresh()/settle() directly instead of waiting on timers.

import { ServiceError, type Service } from "./protocol";
import { ConsoleState } from "./state";
import { View, type Handlers } from "./view";

export interface ConsoleOptions {
  /** ms between polls while idle. */
  pollMs?: number;
  /** ms per playback frame. */
  frameMs?: number;
  /** start the timers; tests leave this off and call refresh() themselves. */
  autostart?: boolean;
}

export class ConsoleController {
  readonly state = new ConsoleState();
  readonly view: View;

  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private playTimer: ReturnType<typeof setInterval> | null = null;
  private backoffMs: number;
  private slowed = false;
  private pending: Promise<void> | null = null;

  constructor(
    root: HTMLElement,
    private readonly service: Service,
    private readonly opts: Required<ConsoleOptions>,
  ) {
    this.view = new View(root);
    this.view.bind(this.handlers());
    this.backoffMs = opts.pollMs;
    this.installKeys(root);
    this.view.sync(this.state);
    if (opts.autostart) this.start();
  }

  /** wait for any in-flight service call to finish. */
  async settle(): Promise<void> {
    while (this.pending) await this.pending;
  }

  start(): void {
    this.stop();
    this.pollTimer = setInterval(() => this.run(() => this.refresh()),
                                 this.opts.pollMs);
    this.playTimer = setInterval(() => {
      this.state.tick();
      this.view.sync(this.state);
    }, this.opts.frameMs);
    this.run(() => this.refresh());
  }

  stop(): void {
    if (this.pollTimer) clearInterval(this.pollTimer);
    if (this.playTimer) clearInterval(this.playTimer);
    this.pollTimer = this.playTimer = null;
  }

  /** fetch the next query when none is active; refresh progress. */
  async refresh(): Promise<void> {
    try {
      this.state.progress = await this.service.session();
      if (this.state.query === null || this.state.phase === "acked") {
        const query = await this.service.nextQuery();
        if (query && query.segment_id !== this.state.query?.segment_id) {
          this.view.prepareQuery(query.frames);
          this.view.setActions(query.action_names);
          this.state.loadQuery(query);
        } else if (!query && this.state.phase === "acked") {
          this.state.clearQuery();
        }
      }
      this.backoffMs = this.opts.pollMs;
      if (this.slowed) {
        this.slowed = false;
        this.restartPoll(this.opts.pollMs);
      }
      if (this.state.banner?.startsWith("service unreachable")) {
        this.state.banner = null;
      }
    } catch (err) {
      if (err instanceof ServiceError) {
        this.state.banner = err.reason;
      } else {
        // network failure: back off and tell the user we keep trying
        this.backoffMs = Math.min(this.backoffMs * 2, 30_000);
        this.slowed = true;
        this.state.banner =
          `service unreachable, retrying (next poll <= ${
            Math.round(this.backoffMs / 1000)}s)`;
        this.restartPoll(this.backoffMs);
      }
    }
    this.view.sync(this.state);
  }

  async submit(): Promise<void> {
    const { query, selectedT, selectedAction } = this.state;
    if (!this.state.canSubmit || !query) return;
    const action = query.action_names[selectedAction!];
    await this.resolve(() =>
      this.service.submitLabel(query.segment_id, selectedT!, action));
  }

  async pass(): Promise<void> {
    const query = this.state.query;
    if (!this.state.canPass || !query) return;
    await this.resolve(() => this.service.submitPass(query.segment_id));
  }

  /** send one outcome; on ack go straight for the next query. */
  private async resolve(op: () => Promise<unknown>): Promise<void> {
    this.state.beginSubmit();
    this.view.sync(this.state);
    try {
      await op();
      this.state.ackSubmit();
      this.view.sync(this.state);
      await this.refresh();
    } catch (err) {
      if (err instanceof ServiceError) {
        this.state.rejectSubmit(err.reason);
      } else {
        this.state.rejectSubmit("service unreachable, try again");
      }
      this.view.sync(this.state);
    }
  }

  private restartPoll(intervalMs: number): void {
    if (!this.pollTimer) return;
    clearInterval(this.pollTimer);
    this.pollTimer = setInterval(() => this.run(() => this.refresh()),
                                 intervalMs);
  }

  private run(op: () => Promise<void>): void {
    const prev = this.pending ?? Promise.resolve();
    const next = prev.then(op, op).finally(() => {
      if (this.pending === next) this.pending = null;
    });
    this.pending = next;
  }

  private handlers(): Handlers {
    return {
      onScrub: (t) => {
        this.state.playing = false;
        this.state.setCursor(t);
        this.view.sync(this.state);
      },
      onTogglePlay: () => {
        this.state.playing = !this.state.playing;
        this.view.sync(this.state);
      },
      onMark: () => {
        this.state.selectTimestep(this.state.cursor);
        this.view.sync(this.state);
      },
      onAction: (i) => {
        this.state.selectAction(i);
        this.view.sync(this.state);
      },
      onSubmit: () => this.run(() => this.submit()),
      onPass: () => this.run(() => this.pass()),
    };
  }

  private installKeys(root: HTMLElement): void {
    const doc = root.ownerDocument;
    doc.addEventListener("keydown", (ev) => {
      const q = this.state.query;
      if (!q) return;
      if (ev.key >= "1" && ev.key <= "9") {
        // digits mirror the action legend order
        this.state.selectAction(Number(ev.key) - 1);
      } else if (ev.key === "ArrowLeft" || ev.key === "ArrowRight") {
        this.state.playing = false;
        this.state.setCursor(
          this.state.cursor + (ev.key === "ArrowRight" ? 1 : -1));
      } else if (ev.key === " ") {
        this.state.playing = !this.state.playing;
        ev.preventDefault();
      } else if (ev.key === "m") {
        this.state.selectTimestep(this.state.cursor);
      } else if (ev.key === "Enter" && this.state.canSubmit) {
        this.run(() => this.submit());
      } else if (ev.key === "p" && this.state.canPass) {
        this.run(() => this.pass());
      } else {
        return;
      }
      this.view.sync(this.state);
    });
  }
}

export function startConsole(
  root: HTMLElement,
  service: Service,
  opts: ConsoleOptions = {},
): ConsoleController {
  return new ConsoleController(root, service, {
    pollMs: opts.pollMs ?? 1000,
    frameMs: opts.frameMs ?? 250,
    autostart: opts.autostart ?? false,
  });
}
