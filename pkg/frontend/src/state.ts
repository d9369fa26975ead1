/** Single source of truth for the view.
 *
 * The thumbnail pane always shows exactly the current selection for the
 * current level, in selection order, paged 24 to a page. Selections replace
 * wholesale (last write wins), so rapid brushing can never leave the pane
 * showing a stale mix. Switching levels never touches the chip selection:
 * drill-down reads it, and returning to chip level restores the same pane.
 */

export type Level = "chip" | "segment";

export const PAGE_SIZE = 24;

export interface ViewState {
  level: Level;
  chipSelection: readonly string[];
  segmentSelection: readonly string[];
  activeLabel: string;
  page: number;
  pageSize: number;
}

export function initialState(): ViewState {
  return {
    level: "chip",
    chipSelection: [],
    segmentSelection: [],
    activeLabel: "",
    page: 0,
    pageSize: PAGE_SIZE,
  };
}

function dedupe(ids: readonly string[]): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const id of ids) {
    if (!seen.has(id)) {
      seen.add(id);
      out.push(id);
    }
  }
  return out;
}

/** The selection the pane reflects at the current level. */
export function selectionFor(state: ViewState): readonly string[] {
  return state.level === "chip" ? state.chipSelection : state.segmentSelection;
}

/** Replace the current level's selection wholesale (brush result). */
export function setSelection(state: ViewState, ids: readonly string[]): ViewState {
  const selection = dedupe(ids);
  const next =
    state.level === "chip"
      ? { ...state, chipSelection: selection }
      : { ...state, segmentSelection: selection };
  return { ...next, page: 0 };
}

/** Switch levels; the chip selection survives any number of round trips. */
export function setLevel(state: ViewState, level: Level): ViewState {
  if (level === state.level) return state;
  // entering segment level starts a fresh drill-down context
  const segmentSelection = level === "segment" ? [] : state.segmentSelection;
  return { ...state, level, segmentSelection, page: 0 };
}

export function setActiveLabel(state: ViewState, label: string): ViewState {
  return { ...state, activeLabel: label };
}

export function pageCount(state: ViewState): number {
  return Math.max(1, Math.ceil(selectionFor(state).length / state.pageSize));
}

export function setPage(state: ViewState, page: number): ViewState {
  const clamped = Math.min(Math.max(0, page), pageCount(state) - 1);
  return { ...state, page: clamped };
}

/** Items the pane shows right now: current page of the selection, in order. */
export function pageItems(state: ViewState): readonly string[] {
  const selection = selectionFor(state);
  const start = state.page * state.pageSize;
  return selection.slice(start, start + state.pageSize);
}

export type Listener = (state: ViewState) => void;

/** Minimal observable store; every update notifies synchronously. */
export class Store {
  private state: ViewState = initialState();
  private listeners = new Set<Listener>();

  get(): ViewState {
    return this.state;
  }

  update(fn: (state: ViewState) => ViewState): ViewState {
    this.state = fn(this.state);
    for (const listener of this.listeners) listener(this.state);
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }
}
