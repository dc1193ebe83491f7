/**
 * Pure state machine behind the rating form.
 *
 * Transitions return new states; nothing here touches the DOM or the
 * network, so every invariant is testable in isolation:
 *   - submit stays disabled until a score is selected,
 *   - only integer scores 1..10 are representable,
 *   - one in-flight submission at a time.
 */

import { RatingTask, SCORE_MAX, SCORE_MIN } from "./api.js";

/** Scale anchors shown beside the score buttons at all times. */
export const SCORE_ANCHORS: ReadonlyArray<{ score: number; meaning: string }> = [
  { score: 1, meaning: "completely wrong translation" },
  { score: 5, meaning: "understandable gist but with errors" },
  { score: 10, meaning: "perfect translation that preserves the full meaning" },
];

export type Phase =
  | "loading" // fetching the next task
  | "rating" // task on screen, collecting score
  | "submitting" // POST in flight
  | "complete" // no more tasks for this rater
  | "failed"; // task fetch failed; retry affordance shown

export interface RatingFormState {
  phase: Phase;
  task: RatingTask | null;
  score: number | null;
  catastrophic: boolean;
  /** Inline error from a rejected submission or banner text on fetch failure. */
  error: string | null;
  /** Acknowledged submissions this session. */
  submitted: number;
}

export const initialState: RatingFormState = {
  phase: "loading",
  task: null,
  score: null,
  catastrophic: false,
  error: null,
  submitted: 0,
};

export function canSubmit(state: RatingFormState): boolean {
  return state.phase === "rating" && state.task !== null && state.score !== null;
}

export function taskLoaded(state: RatingFormState, task: RatingTask): RatingFormState {
  return {
    ...state,
    phase: "rating",
    task,
    score: null,
    catastrophic: false,
    error: null,
  };
}

export function noMoreTasks(state: RatingFormState): RatingFormState {
  return { ...state, phase: "complete", task: null, score: null, error: null };
}

export function loadFailed(state: RatingFormState, message: string): RatingFormState {
  return { ...state, phase: "failed", task: null, score: null, error: message };
}

export function retrying(state: RatingFormState): RatingFormState {
  return { ...state, phase: "loading", error: null };
}

/** Ignores anything that is not an integer in 1..10, like the control does. */
export function selectScore(state: RatingFormState, score: number): RatingFormState {
  if (state.phase !== "rating") {
    return state;
  }
  if (!Number.isInteger(score) || score < SCORE_MIN || score > SCORE_MAX) {
    return state;
  }
  return { ...state, score, error: null };
}

export function setCatastrophic(state: RatingFormState, flagged: boolean): RatingFormState {
  if (state.phase !== "rating") {
    return state;
  }
  return { ...state, catastrophic: flagged };
}

/**
 * Move into the in-flight phase. Returns the unchanged state when submission
 * is not allowed (no score yet, or already submitting), which is what makes
 * double clicks harmless.
 */
export function beginSubmit(state: RatingFormState): RatingFormState {
  if (!canSubmit(state)) {
    return state;
  }
  return { ...state, phase: "submitting", error: null };
}

export function submitSucceeded(state: RatingFormState): RatingFormState {
  return {
    ...state,
    phase: "loading",
    task: null,
    score: null,
    catastrophic: false,
    error: null,
    submitted: state.submitted + 1,
  };
}

/** Rejected submission: back to rating with the task and selections intact. */
export function submitFailed(state: RatingFormState, message: string): RatingFormState {
  return { ...state, phase: "submitting" === state.phase ? "rating" : state.phase, error: message };
}
