/**
 * Round-trip against the real annotation server.
 *
 * Builds a 20-post corpus, runs the pipeline's ingest and sample
 * stages, starts `skdiscourse annotate-serve`, and drives two
 * simulated coders through the UI code paths (one by button clicks,
 * one keyboard-only). Verifies the write-through contract: the
 * exported labels match the submissions exactly, the kappa shown in
 * the UI is the server's number, and the disagreement view lists
 * exactly the conflicts the plans construct.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApi, ServerRejection } from "../src/api.js";
import { AnnotationApp } from "../src/app.js";
import { formatKappa } from "../src/state.js";

const PORT = 8400 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const ROUND = "round1";
const CATEGORIES = ["non_racist", "covert", "overt"] as const;

// tasks are served in round order; these plans disagree at 5, 11, 17
const anaPlanAt = (i: number) => CATEGORIES[i % 3]!;
const betoPlanAt = (i: number) =>
  [5, 11, 17].includes(i) ? CATEGORIES[(i + 1) % 3]! : CATEGORIES[i % 3]!;

const POST_TEXTS = new Map<string, string>();
for (let i = 1; i <= 20; i++) {
  const id = `p${String(i).padStart(2, "0")}`;
  // one post carries markup to prove the text is rendered verbatim
  POST_TEXTS.set(
    id,
    i === 7 ? "posible <b>sesgo</b> & ruido" : `mensaje número ${i} sobre el tema`,
  );
}

let workdir: string;
let server: ChildProcess | null = null;
let serverLog = "";

/** (post_id, coder, label) triples actually submitted, in order. */
const submissions: Array<{ postId: string; coder: string; label: string }> = [];

function runStage(config: string, stage: string): void {
  const result = spawnSync("skdiscourse", ["-c", config, stage], {
    encoding: "utf8",
  });
  if (result.status !== 0) {
    throw new Error(`${stage} failed:\n${result.stdout}\n${result.stderr}`);
  }
}

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      const response = await fetch(`${BASE}/rounds`);
      if (response.ok) return;
    } catch {
      // still booting
    }
    if (Date.now() > deadline) {
      throw new Error(`server did not come up on ${BASE}\n${serverLog}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "annotation-ui-"));

  const lines = Array.from(POST_TEXTS.entries()).map(([id, text], i) =>
    JSON.stringify({
      post_id: id,
      text,
      author_id: `a${(i % 4) + 1}`,
      created_at: 1_570_000_000 + i * 60,
      retweet_of: null,
      author_verified: false,
      author_handle: `@a${(i % 4) + 1}`,
    }),
  );
  writeFileSync(join(workdir, "corpus.jsonl"), lines.join("\n") + "\n");

  const config = join(workdir, "config.yaml");
  writeFileSync(
    config,
    [
      "seed: 7",
      "workdir: run",
      "corpus:",
      "  path: corpus.jsonl",
      "  format: jsonl",
      "sample:",
      "  n_total: 20",
      "annotation:",
      "  coders: [ana, beto]",
      "  rounds: [20]",
      "serve:",
      "  host: 127.0.0.1",
      `  port: ${PORT}`,
      "",
    ].join("\n"),
  );

  runStage(config, "ingest");
  runStage(config, "sample");

  server = spawn("skdiscourse", ["-c", config, "annotate-serve"], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  server.stdout?.on("data", (chunk) => (serverLog += chunk));
  server.stderr?.on("data", (chunk) => (serverLog += chunk));
  await waitForServer();
});

afterAll(async () => {
  if (server) {
    server.kill("SIGTERM");
    await new Promise((resolve) => setTimeout(resolve, 300));
  }
  rmSync(workdir, { recursive: true, force: true });
});

function mount(): HTMLElement {
  const root = document.createElement("div");
  document.body.append(root);
  return root;
}

function clickCategory(root: HTMLElement, category: string): void {
  const button = root.querySelector<HTMLButtonElement>(
    `button[data-category="${category}"]`,
  );
  if (!button) throw new Error(`no button for ${category}`);
  expect(button.disabled).toBe(false);
  button.click();
}

describe("two-coder round trip", () => {
  it("labels the whole round through the UI and honors every contract", async () => {
    const api = new AnnotationApi(BASE);

    // -- the choices must mirror the served codebook exactly
    const anaRoot = mount();
    const ana = new AnnotationApp(anaRoot, api, ROUND, "ana");
    await ana.start();
    const codebook = await api.codebook(ROUND);
    expect(ana.state.choices.map((c) => c.category)).toEqual(
      Object.keys(codebook),
    );
    for (const choice of ana.state.choices) {
      expect(choice.rules).toEqual(codebook[choice.category]!.rules);
    }

    // -- ana labels 5 posts by clicking, texts rendered verbatim
    for (let i = 0; i < 5; i++) {
      const task = ana.state.task!;
      expect(task).not.toBeNull();
      const shown = anaRoot.querySelector('[data-role="post-text"]')!;
      expect(shown.textContent).toBe(POST_TEXTS.get(task.postId));
      const label = anaPlanAt(i);
      submissions.push({ postId: task.postId, coder: "ana", label });
      clickCategory(anaRoot, label);
      await ana.settled();
    }
    expect(ana.state.progress.done).toBe(5);

    // -- a reload mid-round loses nothing and repeats nothing
    ana.dispose();
    const reloadedRoot = mount();
    const reloaded = new AnnotationApp(reloadedRoot, api, ROUND, "ana");
    await reloaded.start();
    expect(reloaded.state.progress).toEqual({ done: 5, total: 20 });
    const labeled = new Set(submissions.map((s) => s.postId));
    expect(labeled.size).toBe(5);
    expect(labeled.has(reloaded.state.task!.postId)).toBe(false);

    // -- ana finishes the round in the reloaded session
    for (let i = 5; i < 20; i++) {
      const task = reloaded.state.task!;
      const shown = reloadedRoot.querySelector('[data-role="post-text"]')!;
      expect(shown.textContent).toBe(POST_TEXTS.get(task.postId));
      const label = anaPlanAt(i);
      submissions.push({ postId: task.postId, coder: "ana", label });
      clickCategory(reloadedRoot, label);
      await reloaded.settled();
    }
    expect(reloaded.state.done).toBe(true);
    expect(reloaded.state.progress).toEqual({ done: 20, total: 20 });
    expect(
      reloadedRoot.querySelector('[data-role="done"]'),
    ).not.toBeNull();
    reloaded.dispose();

    // -- beto labels all 20 keyboard-only
    const betoRoot = mount();
    const beto = new AnnotationApp(betoRoot, api, ROUND, "beto");
    await beto.start();
    const keyFor = new Map(beto.state.choices.map((c) => [c.category, c.key]));
    for (let i = 0; i < 20; i++) {
      const task = beto.state.task!;
      const label = betoPlanAt(i);
      submissions.push({ postId: task.postId, coder: "beto", label });
      document.dispatchEvent(
        new KeyboardEvent("keydown", { key: keyFor.get(label)!, bubbles: true }),
      );
      await beto.settled();
    }
    expect(beto.state.done).toBe(true);

    // -- the kappa the UI shows is the server's number
    await beto.refreshKappa();
    beto.render();
    const serverKappa = (await (await fetch(`${BASE}/rounds/${ROUND}/kappa`)).json()) as {
      kappa: number;
      n_items: number;
    };
    expect(beto.state.kappa).toMatchObject({
      kind: "value",
      kappa: serverKappa.kappa,
      nItems: 20,
    });
    const shownKappa = betoRoot.querySelector('[data-role="kappa"]')!;
    expect(shownKappa.textContent).toBe(
      `κ = ${formatKappa(serverKappa.kappa)} (n=20)`,
    );

    // -- the export matches the submissions exactly
    const csv = await api.labelsCsv(ROUND);
    const rows = csv.trim().split("\n").slice(1).map((line) => {
      const [postId, coder, , label] = line.split(",");
      return `${postId}|${coder}|${label}`;
    });
    expect(rows).toHaveLength(40);
    const expected = new Set(
      submissions.map((s) => `${s.postId}|${s.coder}|${s.label}`),
    );
    expect(new Set(rows)).toEqual(expected);
    expect(new Set(rows).size).toBe(40);

    // -- the disagreement view lists exactly the constructed conflicts
    const byPost = new Map<string, { ana?: string; beto?: string }>();
    for (const s of submissions) {
      const entry = byPost.get(s.postId) ?? {};
      entry[s.coder as "ana" | "beto"] = s.label;
      byPost.set(s.postId, entry);
    }
    const conflicts = new Map(
      [...byPost.entries()].filter(([, v]) => v.ana !== v.beto),
    );
    expect(conflicts.size).toBe(3);

    await beto.showDisagreements();
    const shownRows = betoRoot.querySelectorAll(
      '[data-role="disagreements"] article',
    );
    expect(shownRows).toHaveLength(3);
    const shownIds = new Set(
      [...shownRows].map((row) => (row as HTMLElement).dataset.postId),
    );
    expect(shownIds).toEqual(new Set(conflicts.keys()));
    for (const row of shownRows) {
      const postId = (row as HTMLElement).dataset.postId!;
      const want = conflicts.get(postId)!;
      expect(
        row.querySelector('[data-coder="ana"]')!.textContent,
      ).toBe(`ana: ${want.ana}`);
      expect(
        row.querySelector('[data-coder="beto"]')!.textContent,
      ).toBe(`beto: ${want.beto}`);
      expect(row.querySelector('[data-role="gold-note"]')!.textContent).toBe(
        "gold defaults to non_racist",
      );
    }
    beto.dispose();
  });

  it("surfaces a server rejection verbatim", async () => {
    const api = new AnnotationApi(BASE);
    const root = mount();
    const ghost = new AnnotationApp(root, api, ROUND, "ghost");
    await ghost.start();

    let expected = "";
    try {
      await api.nextTask(ROUND, "ghost");
    } catch (err) {
      expect(err).toBeInstanceOf(ServerRejection);
      expected = (err as ServerRejection).detail;
    }
    expect(expected).not.toBe("");
    expect(ghost.state.error).toBe(expected);
    expect(root.querySelector('[data-role="error"]')!.textContent).toBe(
      expected,
    );
    ghost.dispose();
  });

  it("blocks labeling while the server is unreachable and offers retry", async () => {
    // nothing listens on this port
    const api = new AnnotationApi("http://127.0.0.1:9");
    const root = mount();
    const app = new AnnotationApp(root, api, ROUND, "ana");
    await app.start();

    expect(app.state.offline).toBe(true);
    expect(root.querySelector('[data-role="offline"]')).not.toBeNull();
    const retry = root.querySelector<HTMLButtonElement>('[data-role="retry"]');
    expect(retry).not.toBeNull();

    // a choose() while offline must not reach any server
    await app.choose("covert");
    expect(app.state.offline).toBe(true);

    retry!.click();
    await new Promise((resolve) => setTimeout(resolve, 200));
    expect(app.state.offline).toBe(true);
    app.dispose();
  });
});
