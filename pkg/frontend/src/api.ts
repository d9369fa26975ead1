/** Typed client for the labelling service HTTP API.
 *
 * Every call goes through `fetch`; callers may pass an `abortKey` so that a
 * newer request with the same key cancels the one still in flight (used for
 * job polling and projection reloads while the user keeps interacting).
 */

export type Level = "chip" | "segment";

export interface Meta {
  chip_count: number;
  bands: number;
  chip_size: number;
  display_bands: number[];
  splits: Record<string, number>;
  label_count: number;
}

export interface ProjPoint {
  id: string;
  x: number;
  y: number;
}

export interface ProjectionPayload {
  level: Level;
  params: Record<string, unknown>;
  points: ProjPoint[];
}

export interface Job {
  id: string;
  status: "running" | "done" | "error";
  result: ProjectionPayload | null;
  error: string | null;
}

export interface SegmentDto {
  id: number;
  pixel_count: number;
  centroid: [number, number];
  rle: number[];
}

export interface ChipSegments {
  chip_id: string;
  height: number;
  width: number;
  segments: SegmentDto[];
}

export interface LabelRecord {
  timestamp: string;
  level: Level;
  chip_id: string;
  segment_id: number | null;
  label: string;
  session: string;
}

export interface LabelRequest {
  level: Level;
  chip_id: string;
  segment_id?: number;
  label: string;
  session: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  private inflight = new Map<string, AbortController>();

  constructor(readonly baseUrl: string) {}

  /** Cancel the in-flight request registered under `key`, if any. */
  abort(key: string): void {
    this.inflight.get(key)?.abort();
    this.inflight.delete(key);
  }

  abortAll(): void {
    for (const key of [...this.inflight.keys()]) this.abort(key);
  }

  private async request<T>(
    path: string,
    init: RequestInit = {},
    abortKey?: string,
  ): Promise<T> {
    let signal: AbortSignal | undefined;
    let controller: AbortController | undefined;
    if (abortKey !== undefined) {
      this.abort(abortKey);
      controller = new AbortController();
      this.inflight.set(abortKey, controller);
      signal = controller.signal;
    }
    try {
      const res = await fetch(this.baseUrl + path, { ...init, signal });
      if (!res.ok) {
        let detail = res.statusText;
        try {
          const body = (await res.json()) as { detail?: string };
          if (body.detail) detail = body.detail;
        } catch {
          /* non-JSON error body; keep statusText */
        }
        throw new ApiError(res.status, detail);
      }
      return (await res.json()) as T;
    } finally {
      if (abortKey !== undefined && this.inflight.get(abortKey) === controller) {
        this.inflight.delete(abortKey);
      }
    }
  }

  getMeta(): Promise<Meta> {
    return this.request<Meta>("/api/meta");
  }

  getChipProjection(): Promise<ProjectionPayload> {
    return this.request<ProjectionPayload>("/api/projection/chips", {}, "projection");
  }

  startSegmentProjection(chipIds: string[]): Promise<{ job_id: string }> {
    return this.request<{ job_id: string }>(
      "/api/projection/segments",
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ chip_ids: chipIds }),
      },
      "start-job",
    );
  }

  getJob(jobId: string): Promise<Job> {
    return this.request<Job>(`/api/jobs/${jobId}`, {}, "poll-job");
  }

  /** Poll a job until it finishes; rejects on job error or timeout. */
  async waitForJob(
    jobId: string,
    opts: { intervalMs?: number; timeoutMs?: number } = {},
  ): Promise<ProjectionPayload> {
    const interval = opts.intervalMs ?? 250;
    const deadline = Date.now() + (opts.timeoutMs ?? 120_000);
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.status === "done" && job.result) return job.result;
      if (job.status === "error") {
        throw new Error(`projection job failed: ${job.error ?? "unknown"}`);
      }
      if (Date.now() > deadline) {
        throw new Error(`projection job ${jobId} timed out`);
      }
      await new Promise((r) => setTimeout(r, interval));
    }
  }

  getSegments(chipId: string): Promise<ChipSegments> {
    return this.request<ChipSegments>(`/api/chips/${chipId}/segments`);
  }

  thumbnailUrl(chipId: string): string {
    return `${this.baseUrl}/api/chips/${chipId}/thumbnail.png`;
  }

  postLabel(req: LabelRequest): Promise<{ ok: boolean; record: LabelRecord }> {
    return this.request<{ ok: boolean; record: LabelRecord }>("/api/labels", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  exportUrl(format: "csv" | "masks"): string {
    return `${this.baseUrl}/api/labels/export?format=${format}`;
  }
}
