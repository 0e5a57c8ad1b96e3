// wire types and the http client for the labeling service.

export interface HighwayFrame {
  ego: { lane: number; x: number; speed: number };
  vehicles: Array<{ lane: number; x: number; speed: number }>;
  executed_action: string;
}

export interface GridFrame {
  grid: number;
  pos: [number, number];
  goal: [number, number];
  cliff: Array<[number, number]>;
  executed_action: string;
}

export type Frame = HighwayFrame | GridFrame;

export function isHighwayFrame(f: Frame): f is HighwayFrame {
  return "ego" in f;
}

export interface QueryDoc {
  segment_id: number;
  frames: Frame[];
  action_names: string[];
}

export interface Progress {
  status: string;
  iteration: number;
  total_iters: number;
  labels_total: number;
  segments_total: number;
  segments_done: number;
}

export interface Ack {
  ok: boolean;
  resolved: boolean;
  labels?: number;
}

/** Service rejected the request; `reason` is the server's message. */
export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly reason: string,
  ) {
    super(`${status}: ${reason}`);
    this.name = "ServiceError";
  }
}

/** What the console needs from the backend; tests substitute a fake. */
export interface Service {
  nextQuery(): Promise<QueryDoc | null>;
  session(): Promise<Progress>;
  submitLabel(segmentId: number, t: number, action: string): Promise<Ack>;
  submitPass(segmentId: number): Promise<Ack>;
}

/**
 * Fetch-based client. Requests are serialized through a promise chain so
 * at most one is in flight at a time.
 */
export class HttpService implements Service {
  private chain: Promise<unknown> = Promise.resolve();

  constructor(private readonly base: string = "") {}

  private enqueue<T>(op: () => Promise<T>): Promise<T> {
    const next = this.chain.then(op, op);
    this.chain = next.catch(() => undefined);
    return next;
  }

  nextQuery(): Promise<QueryDoc | null> {
    return this.enqueue(async () => {
      const res = await fetch(`${this.base}/api/query/next`);
      if (res.status === 204) return null;
      if (!res.ok) throw await toServiceError(res);
      return (await res.json()) as QueryDoc;
    });
  }

  session(): Promise<Progress> {
    return this.enqueue(async () => {
      const res = await fetch(`${this.base}/api/session`);
      if (!res.ok) throw await toServiceError(res);
      return (await res.json()) as Progress;
    });
  }

  submitLabel(segmentId: number, t: number, action: string): Promise<Ack> {
    return this.post(`/api/query/${segmentId}/label`, { t, action });
  }

  submitPass(segmentId: number): Promise<Ack> {
    return this.post(`/api/query/${segmentId}/pass`, {});
  }

  private post(path: string, body: unknown): Promise<Ack> {
    return this.enqueue(async () => {
      const res = await fetch(`${this.base}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
      if (!res.ok) throw await toServiceError(res);
      return (await res.json()) as Ack;
    });
  }
}

async function toServiceError(res: Response): Promise<ServiceError> {
  let reason = res.statusText || `http ${res.status}`;
  try {
    const doc = await res.json();
    if (doc && typeof doc.error === "string") reason = doc.error;
  } catch {
    // non-json error body; keep the status text
  }
  return new ServiceError(res.status, reason);
}
