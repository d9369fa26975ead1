/** App bootstrap: wires the API client, the view-state store, the scatter
 * canvas, and the selection pane together.
 *
 * The page talks to the labelling service at the same origin by default;
 * pass `?api=http://host:port` when serving the static bundle separately.
 */

import { ApiClient } from "./api.js";
import type { ProjPoint } from "./api.js";
import { SelectionPane, renderPager, splitSegmentId } from "./pane.js";
import { ScatterView } from "./scatter.js";
import { Store, selectionFor, setActiveLabel, setLevel, setPage, setSelection } from "./state.js";
import type { Level } from "./state.js";

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return param ? param.replace(/\/$/, "") : "";
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const api = new ApiClient(apiBase());
  const store = new Store();
  const status = el<HTMLElement>("status");
  const counts = el<HTMLElement>("counts");
  const pane = new SelectionPane(el("pane"), api);
  const pager = el<HTMLElement>("pager");
  const labelInput = el<HTMLInputElement>("label-input");
  const assignBtn = el<HTMLButtonElement>("assign");
  const chipBtn = el<HTMLButtonElement>("level-chip");
  const segmentBtn = el<HTMLButtonElement>("level-segment");

  el<HTMLAnchorElement>("export-csv").href = api.exportUrl("csv");
  el<HTMLAnchorElement>("export-masks").href = api.exportUrl("masks");

  const canvas = el<HTMLCanvasElement>("scatter");
  const scatter = new ScatterView(canvas, {
    onBrush: (ids) => store.update((s) => setSelection(s, ids)),
  });

  let chipPoints: ProjPoint[] = [];
  let labelCount = 0;

  const meta = await api.getMeta();
  labelCount = meta.label_count;
  el<HTMLElement>("title").textContent =
    `terralabel — ${meta.chip_count} chips, ${meta.bands} bands, ${meta.chip_size}px`;

  const setStatus = (text: string) => {
    status.textContent = text;
  };

  let paneTimer = 0;
  store.subscribe((state) => {
    scatter.setSelected(selectionFor(state));
    renderPager(pager, state, (page) => store.update((s) => setPage(s, page)));
    counts.textContent = `${labelCount} labels`;
    chipBtn.classList.toggle("active", state.level === "chip");
    segmentBtn.classList.toggle("active", state.level === "segment");
    // brushing fires on every pointer move; settle before re-building the pane
    window.clearTimeout(paneTimer);
    paneTimer = window.setTimeout(() => {
      void pane.render(store.get()).catch((err) => setStatus(String(err)));
    }, 120);
  });

  async function showChipLevel(): Promise<void> {
    setStatus("loading chip projection…");
    const payload = await api.getChipProjection();
    chipPoints = payload.points;
    store.update((s) => setLevel(s, "chip"));
    scatter.setPoints(chipPoints);
    scatter.setSelected(store.get().chipSelection);
    setStatus(`chip level: ${chipPoints.length} points`);
  }

  async function showSegmentLevel(): Promise<void> {
    const chips = store.get().chipSelection;
    if (chips.length === 0) {
      setStatus("brush some chips first, then drill down");
      return;
    }
    setStatus(`projecting segments of ${chips.length} chips…`);
    const { job_id } = await api.startSegmentProjection([...chips]);
    const payload = await api.waitForJob(job_id);
    store.update((s) => setLevel(s, "segment"));
    scatter.setPoints(payload.points);
    setStatus(`segment level: ${payload.points.length} points`);
  }

  chipBtn.addEventListener("click", () => {
    void showChipLevel().catch((err) => setStatus(String(err)));
  });
  segmentBtn.addEventListener("click", () => {
    void showSegmentLevel().catch((err) => setStatus(String(err)));
  });

  labelInput.addEventListener("input", () => {
    store.update((s) => setActiveLabel(s, labelInput.value.trim()));
  });

  assignBtn.addEventListener("click", () => {
    void assignLabels().catch((err) => setStatus(String(err)));
  });

  async function assignLabels(): Promise<void> {
    const state = store.get();
    const label = state.activeLabel;
    const targets = selectionFor(state);
    if (!label || targets.length === 0) {
      setStatus("pick a label and a selection first");
      return;
    }
    const level: Level = state.level;
    let written = 0;
    if (level === "chip") {
      for (const chipId of targets) {
        await api.postLabel({ level, chip_id: chipId, label, session: "browser" });
        written += 1;
      }
    } else {
      for (const id of targets) {
        const [chipId, segId] = splitSegmentId(id);
        await api.postLabel({
          level,
          chip_id: chipId,
          segment_id: segId,
          label,
          session: "browser",
        });
        written += 1;
      }
    }
    labelCount += written;
    counts.textContent = `${labelCount} labels`;
    setStatus(`labelled ${written} ${level}${written === 1 ? "" : "s"} as "${label}"`);
  }

  await showChipLevel();
}

void boot().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = `failed to start: ${err}`;
});
