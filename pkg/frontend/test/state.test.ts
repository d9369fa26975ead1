import { describe, expect, it } from "vitest";

import {
  PAGE_SIZE,
  Store,
  initialState,
  pageCount,
  pageItems,
  selectionFor,
  setLevel,
  setPage,
  setSelection,
} from "../src/state.js";

const ids = (n: number, prefix = "c") =>
  Array.from({ length: n }, (_, i) => `${prefix}${i}`);

describe("selection", () => {
  it("replaces the previous selection wholesale (last write wins)", () => {
    let s = setSelection(initialState(), ["c1", "c2", "c3"]);
    s = setSelection(s, ["c7", "c9"]);
    expect(selectionFor(s)).toEqual(["c7", "c9"]);
  });

  it("keeps brush order and drops duplicates", () => {
    const s = setSelection(initialState(), ["c3", "c1", "c3", "c2", "c1"]);
    expect(selectionFor(s)).toEqual(["c3", "c1", "c2"]);
  });

  it("resets paging when the selection changes", () => {
    let s = setSelection(initialState(), ids(60));
    s = setPage(s, 2);
    expect(s.page).toBe(2);
    s = setSelection(s, ids(5));
    expect(s.page).toBe(0);
  });

  it("writes to the selection of the current level only", () => {
    let s = setSelection(initialState(), ["c1", "c2"]);
    s = setLevel(s, "segment");
    s = setSelection(s, ["c1:0", "c1:4"]);
    expect(s.chipSelection).toEqual(["c1", "c2"]);
    expect(s.segmentSelection).toEqual(["c1:0", "c1:4"]);
  });
});

describe("levels", () => {
  it("preserves the chip selection across a drill-down round trip", () => {
    let s = setSelection(initialState(), ["c5", "c6", "c7"]);
    s = setLevel(s, "segment");
    s = setSelection(s, ["c5:1"]);
    s = setLevel(s, "chip");
    expect(s.level).toBe("chip");
    expect(selectionFor(s)).toEqual(["c5", "c6", "c7"]);
  });

  it("starts segment level with an empty selection", () => {
    let s = setSelection(initialState(), ["c5"]);
    s = setLevel(s, "segment");
    expect(selectionFor(s)).toEqual([]);
    s = setSelection(s, ["c5:2"]);
    s = setLevel(s, "chip");
    s = setLevel(s, "segment");
    expect(selectionFor(s)).toEqual([]);
  });

  it("is a no-op when setting the current level", () => {
    const s = setSelection(initialState(), ["c1"]);
    expect(setLevel(s, "chip")).toBe(s);
  });
});

describe("paging", () => {
  it("shows 24 items per page and clamps navigation", () => {
    expect(PAGE_SIZE).toBe(24);
    let s = setSelection(initialState(), ids(50));
    expect(pageCount(s)).toBe(3);
    expect(pageItems(s)).toEqual(ids(50).slice(0, 24));
    s = setPage(s, 1);
    expect(pageItems(s)).toEqual(ids(50).slice(24, 48));
    s = setPage(s, 99);
    expect(s.page).toBe(2);
    expect(pageItems(s)).toEqual(ids(50).slice(48));
    s = setPage(s, -4);
    expect(s.page).toBe(0);
  });

  it("reports one (empty) page for an empty selection", () => {
    const s = initialState();
    expect(pageCount(s)).toBe(1);
    expect(pageItems(s)).toEqual([]);
  });
});

describe("Store", () => {
  it("notifies subscribers on update and honours unsubscribe", () => {
    const store = new Store();
    const seen: number[] = [];
    const off = store.subscribe((state) => seen.push(state.chipSelection.length));
    store.update((s) => setSelection(s, ["c1", "c2"]));
    expect(store.get().chipSelection).toEqual(["c1", "c2"]);
    off();
    store.update((s) => setSelection(s, ["c1"]));
    expect(seen).toEqual([2]);
  });
});
