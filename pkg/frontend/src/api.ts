/**
 * Typed client for the rating service HTTP API.
 *
 * Every response body is validated before it reaches the UI; a payload that
 * does not match the contract raises ApiError instead of leaking undefined
 * fields into the form.
 */

export interface RatingTask {
  task_id: string;
  image_id: string;
  language: string;
  english_caption: string;
  translated_caption: string;
}

export interface RatingSubmission {
  task_id: string;
  rater_id: string;
  score: number;
  catastrophic: boolean;
}

export interface RatingAccepted {
  rater_id: string;
  image_id: string;
  language: string;
  score: number;
  catastrophic: boolean;
  submitted_at: string;
}

export interface LanguageInfo {
  source: string;
  targets: string[];
  available: string[];
}

export const SCORE_MIN = 1;
export const SCORE_MAX = 10;

export class ApiError extends Error {
  readonly status?: number;

  constructor(message: string, status?: number) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

/** The slice of the HTTP client the rating form depends on. */
export interface RatingApi {
  fetchNextTask(raterId: string, language: string): Promise<RatingTask | null>;
  submitRating(submission: RatingSubmission): Promise<RatingAccepted>;
}

function asString(payload: Record<string, unknown>, field: string): string {
  const value = payload[field];
  if (typeof value !== "string" || value.length === 0) {
    throw new ApiError(`malformed payload: field ${field} missing or not a string`);
  }
  return value;
}

function asObject(value: unknown): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new ApiError("malformed payload: expected a JSON object");
  }
  return value as Record<string, unknown>;
}

export function parseTask(value: unknown): RatingTask {
  const payload = asObject(value);
  return {
    task_id: asString(payload, "task_id"),
    image_id: asString(payload, "image_id"),
    language: asString(payload, "language"),
    english_caption: asString(payload, "english_caption"),
    translated_caption: asString(payload, "translated_caption"),
  };
}

export function parseAccepted(value: unknown): RatingAccepted {
  const payload = asObject(value);
  const score = payload.score;
  if (typeof score !== "number" || !Number.isInteger(score)) {
    throw new ApiError("malformed payload: field score missing or not an integer");
  }
  if (typeof payload.catastrophic !== "boolean") {
    throw new ApiError("malformed payload: field catastrophic missing or not a boolean");
  }
  return {
    rater_id: asString(payload, "rater_id"),
    image_id: asString(payload, "image_id"),
    language: asString(payload, "language"),
    score,
    catastrophic: payload.catastrophic,
    submitted_at: asString(payload, "submitted_at"),
  };
}

async function readDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") {
      return body.detail;
    }
    return JSON.stringify(body.detail ?? body);
  } catch {
    return response.statusText || `HTTP ${response.status}`;
  }
}

async function readJson(response: Response): Promise<unknown> {
  try {
    return await response.json();
  } catch {
    throw new ApiError("malformed payload: response body is not valid JSON");
  }
}

export class ApiClient implements RatingApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  /** Next unrated task for this rater, or null when none remain (204). */
  async fetchNextTask(raterId: string, language: string): Promise<RatingTask | null> {
    const query = new URLSearchParams({ rater_id: raterId, language });
    const response = await this.fetchFn(`${this.baseUrl}/api/tasks/next?${query}`);
    if (response.status === 204) {
      return null;
    }
    if (!response.ok) {
      throw new ApiError(await readDetail(response), response.status);
    }
    return parseTask(await readJson(response));
  }

  async submitRating(submission: RatingSubmission): Promise<RatingAccepted> {
    // The score control only produces integers 1..10; this guard makes the
    // invariant hold even for programmatic callers.
    if (
      !Number.isInteger(submission.score) ||
      submission.score < SCORE_MIN ||
      submission.score > SCORE_MAX
    ) {
      throw new ApiError(
        `score must be an integer in ${SCORE_MIN}..${SCORE_MAX}, got ${submission.score}`,
      );
    }
    const response = await this.fetchFn(`${this.baseUrl}/api/ratings`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
    if (response.status !== 201) {
      throw new ApiError(await readDetail(response), response.status);
    }
    return parseAccepted(await readJson(response));
  }

  async fetchLanguages(): Promise<LanguageInfo> {
    const response = await this.fetchFn(`${this.baseUrl}/api/languages`);
    if (!response.ok) {
      throw new ApiError(await readDetail(response), response.status);
    }
    const payload = asObject(await readJson(response));
    const stringList = (field: string): string[] => {
      const value = payload[field];
      if (!Array.isArray(value) || value.some((item) => typeof item !== "string")) {
        throw new ApiError(`malformed payload: field ${field} missing or not a string list`);
      }
      return value as string[];
    };
    return {
      source: asString(payload, "source"),
      targets: stringList("targets"),
      available: stringList("available"),
    };
  }
}
