/**
 * Session state and its pure transition functions.
 *
 * The rendered UI is a function of this state, and the state is built
 * only from server responses plus the in-flight submission flag, so a
 * reload mid-round reconstructs the same picture from the server and
 * can neither lose a submitted label nor duplicate one. Nothing here
 * is persisted client-side; an unsubmitted choice never survives the
 * session.
 */

import type {
  Codebook,
  DisagreementRow,
  KappaResponse,
  NextTaskResponse,
} from "./api.js";

export interface Progress {
  done: number;
  total: number;
}

/** One labeling choice, mirrored 1:1 from the served codebook. */
export interface CategoryChoice {
  category: string;
  title: string;
  rules: string[];
  /** Keyboard shortcut, "1".."9" in codebook order. */
  key: string;
}

/** The post in front of the coder right now. */
export interface UiTask {
  postId: string;
  text: string;
  round: string;
  progress: Progress;
}

export type KappaView =
  | { kind: "value"; kappa: number; nItems: number; degenerate: boolean }
  | { kind: "unavailable"; reason: string };

export interface SessionState {
  round: string;
  coder: string;
  choices: CategoryChoice[];
  task: UiTask | null;
  done: boolean;
  progress: Progress;
  kappa: KappaView | null;
  disagreements: DisagreementRow[] | null;
  submitting: boolean;
  offline: boolean;
  /** Last server rejection, verbatim. */
  error: string | null;
}

export function initialState(round: string, coder: string): SessionState {
  return {
    round,
    coder,
    choices: [],
    task: null,
    done: false,
    progress: { done: 0, total: 0 },
    kappa: null,
    disagreements: null,
    submitting: false,
    offline: false,
    error: null,
  };
}

/** Choices in the server's order; the UI never reorders or filters. */
export function choicesFromCodebook(codebook: Codebook): CategoryChoice[] {
  return Object.entries(codebook).map(([category, entry], i) => ({
    category,
    title: entry.title,
    rules: entry.rules,
    key: String(i + 1),
  }));
}

export function applyCodebook(
  state: SessionState,
  codebook: Codebook,
): SessionState {
  return { ...state, choices: choicesFromCodebook(codebook) };
}

export function applyNext(
  state: SessionState,
  response: NextTaskResponse,
): SessionState {
  const progress = { done: response.n_labeled, total: response.n_posts };
  // a successful round trip means we are back online
  const base = { ...state, progress, offline: false, error: null };
  if (response.done || response.post_id === undefined) {
    return { ...base, task: null, done: true };
  }
  return {
    ...base,
    done: false,
    task: {
      postId: response.post_id,
      text: response.text ?? "",
      round: response.round_id,
      progress,
    },
  };
}

export function beginSubmit(state: SessionState): SessionState {
  return { ...state, submitting: true, error: null };
}

export function applySubmitOk(state: SessionState): SessionState {
  return { ...state, submitting: false };
}

export function applyRejection(
  state: SessionState,
  detail: string,
): SessionState {
  return { ...state, submitting: false, error: detail };
}

export function applyOffline(state: SessionState): SessionState {
  return { ...state, submitting: false, offline: true };
}

export function applyKappa(
  state: SessionState,
  response: KappaResponse,
): SessionState {
  return {
    ...state,
    kappa: {
      kind: "value",
      kappa: response.kappa,
      nItems: response.n_items,
      degenerate: response.degenerate,
    },
  };
}

export function applyKappaUnavailable(
  state: SessionState,
  reason: string,
): SessionState {
  return { ...state, kappa: { kind: "unavailable", reason } };
}

export function applyDisagreements(
  state: SessionState,
  rows: DisagreementRow[],
): SessionState {
  return { ...state, disagreements: rows };
}

/** Submission is blocked while offline, mid-flight, or with no task. */
export function canSubmit(state: SessionState): boolean {
  return state.task !== null && !state.submitting && !state.offline;
}

/** The one kappa formatting used anywhere in the UI. */
export function formatKappa(kappa: number): string {
  return kappa.toFixed(4);
}
