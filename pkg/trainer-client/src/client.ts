/**
 * Batched client for the placement reward service.
 *
 * Wire protocol: POST {baseUrl}/v1/score with
 *   {"items": [{"sample_id", "completion"}], "alpha": optional}
 * returning {"scores": [...], "diagnostics": [...]} aligned with the items,
 * and GET {baseUrl}/v1/health.
 *
 * The client chunks large item lists into at most `maxBatch` per request,
 * issues the requests sequentially, and preserves input order exactly. It
 * ships no training logic: reward semantics live server-side with the
 * dataset.
 */

export interface ScoreItem {
  sample_id: string;
  completion: string;
}

export interface RolloutScore {
  r_format: number;
  r_rec: number;
  r_pos: number;
  r_answer: number;
  r_total: number;
}

export interface HealthStatus {
  status: string;
  samples: number;
}

export interface ClientConfig {
  baseUrl: string;
  /** Per-request timeout in milliseconds. Default 30000. */
  timeoutMs?: number;
  /** Maximum items per HTTP request. Default 128, must be >= 1. */
  maxBatch?: number;
  /** Attempts per request (transport errors and 5xx/429). Default 3. */
  retries?: number;
  /** Base backoff in milliseconds, doubled per retry. Default 200. */
  backoffMs?: number;
}

/** Transport-level failure: server unreachable, timeouts, repeated 5xx. */
export class ConnectionError extends Error {
  constructor(message: string, readonly cause?: unknown) {
    super(message);
    this.name = "ConnectionError";
  }
}

/** The server answered, but not with the wire schema (or with a 4xx). */
export class ProtocolError extends Error {
  constructor(message: string, readonly payload: unknown) {
    super(message);
    this.name = "ProtocolError";
  }
}

const SCORE_FIELDS = ["r_format", "r_rec", "r_pos", "r_answer", "r_total"] as const;

function parseScore(value: unknown, index: number): RolloutScore {
  if (value === null || typeof value !== "object") {
    throw new ProtocolError(`item ${index}: score is not an object`, value);
  }
  const record = value as Record<string, unknown>;
  for (const field of SCORE_FIELDS) {
    if (typeof record[field] !== "number") {
      throw new ProtocolError(`item ${index}: missing numeric field ${field}`, value);
    }
  }
  return {
    r_format: record.r_format as number,
    r_rec: record.r_rec as number,
    r_pos: record.r_pos as number,
    r_answer: record.r_answer as number,
    r_total: record.r_total as number,
  };
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class RewardClient {
  readonly baseUrl: string;
  readonly timeoutMs: number;
  readonly maxBatch: number;
  readonly retries: number;
  readonly backoffMs: number;

  constructor(config: ClientConfig) {
    this.baseUrl = config.baseUrl.replace(/\/+$/, "");
    this.timeoutMs = config.timeoutMs ?? 30_000;
    this.maxBatch = config.maxBatch ?? 128;
    this.retries = config.retries ?? 3;
    this.backoffMs = config.backoffMs ?? 200;
    if (this.maxBatch < 1) {
      throw new Error(`maxBatch must be >= 1, got ${this.maxBatch}`);
    }
    if (this.retries < 1) {
      throw new Error(`retries must be >= 1, got ${this.retries}`);
    }
  }

  private async request(path: string, init: RequestInit): Promise<unknown> {
    let lastError: unknown;
    for (let attempt = 0; attempt < this.retries; attempt++) {
      const controller = new AbortController();
      const timer = setTimeout(() => controller.abort(), this.timeoutMs);
      try {
        const response = await fetch(`${this.baseUrl}${path}`, {
          ...init,
          signal: controller.signal,
        });
        clearTimeout(timer);
        if (response.status >= 500 || response.status === 429) {
          lastError = new Error(`HTTP ${response.status}`);
        } else if (!response.ok) {
          // 4xx is not retryable: the request itself is wrong
          let body: unknown;
          try {
            body = await response.json();
          } catch {
            body = await response.text().catch(() => "");
          }
          throw new ProtocolError(`HTTP ${response.status} from ${path}`, body);
        } else {
          try {
            return await response.json();
          } catch (err) {
            throw new ProtocolError(`non-JSON response from ${path}`, String(err));
          }
        }
      } catch (err) {
        clearTimeout(timer);
        if (err instanceof ProtocolError) {
          throw err;
        }
        lastError = err;
      }
      if (attempt + 1 < this.retries) {
        await sleep(this.backoffMs * 2 ** attempt);
      }
    }
    throw new ConnectionError(
      `request to ${path} failed after ${this.retries} attempts: ${String(lastError)}`,
      lastError,
    );
  }

  async health(): Promise<HealthStatus> {
    const body = await this.request("/v1/health", { method: "GET" });
    const record = body as Record<string, unknown>;
    if (typeof record?.status !== "string" || typeof record?.samples !== "number") {
      throw new ProtocolError("health response missing status/samples", body);
    }
    return { status: record.status, samples: record.samples };
  }

  /**
   * Score items in order. Requests go out in chunks of at most `maxBatch`;
   * the returned array lines up index-for-index with the input.
   */
  async score(items: ScoreItem[], alpha?: number): Promise<RolloutScore[]> {
    const scores: RolloutScore[] = [];
    for (let start = 0; start < items.length; start += this.maxBatch) {
      const chunk = items.slice(start, start + this.maxBatch);
      const payload: Record<string, unknown> = { items: chunk };
      if (alpha !== undefined) {
        payload.alpha = alpha;
      }
      const body = await this.request("/v1/score", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
      const record = body as Record<string, unknown>;
      if (!Array.isArray(record?.scores)) {
        throw new ProtocolError("response has no scores array", body);
      }
      if (record.scores.length !== chunk.length) {
        throw new ProtocolError(
          `expected ${chunk.length} scores, got ${record.scores.length}`,
          body,
        );
      }
      record.scores.forEach((value, offset) => {
        if (value === null) {
          // per-item server-side error (e.g. unknown sample id)
          const diagnostics = Array.isArray(record.diagnostics)
            ? record.diagnostics[offset]
            : undefined;
          throw new ProtocolError(
            `item ${start + offset} (${chunk[offset].sample_id}) was not scored`,
            diagnostics ?? body,
          );
        }
        scores.push(parseScore(value, start + offset));
      });
    }
    return scores;
  }

  /**
   * Adapter for trainer loops expecting a (prompts, completions) -> rewards
   * function. Sample ids come either from a parallel array or from a
   * resolver applied to each prompt (group-sampling trainers repeat the
   * same prompt, so ids typically repeat too). Returns r_total per
   * completion.
   */
  asRewardFn(
    sampleIds: string[] | ((prompt: unknown, index: number) => string),
    alpha?: number,
  ): (prompts: unknown[], completions: string[]) => Promise<number[]> {
    const resolve =
      typeof sampleIds === "function"
        ? sampleIds
        : (_prompt: unknown, index: number) => {
            const id = sampleIds[index];
            if (id === undefined) {
              throw new Error(`no sample id for completion index ${index}`);
            }
            return id;
          };
    return async (prompts, completions) => {
      if (prompts.length !== completions.length) {
        throw new Error(
          `prompts (${prompts.length}) and completions (${completions.length}) differ`,
        );
      }
      const items = completions.map((completion, index) => ({
        sample_id: resolve(prompts[index], index),
        completion,
      }));
      const scores = await this.score(items, alpha);
      return scores.map((score) => score.r_total);
    };
  }
}
