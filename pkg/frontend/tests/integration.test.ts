// End-to-end: the real annotation service (spawned as a subprocess)
// driven through the app with real fetch and synthetic keypresses.
import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApp } from "../src/app.js";
import { AnnotationClient } from "../src/client.js";

const PY = process.env.PYTHON ?? "python3";

function pairFile(path: string, n: number, relation = 1): void {
  const lines = ["image_id,y1,x1,y2,x2,r"];
  for (let i = 0; i < n; i += 1) {
    lines.push(`img${String(i).padStart(3, "0")},2,3,10,20,${relation}`);
  }
  writeFileSync(path, lines.join("\n") + "\n");
}

async function waitForServer(base: string, timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${base}/api/stats`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("server did not come up");
    await new Promise((r) => setTimeout(r, 150));
  }
}

function startServer(args: string[]): ChildProcess {
  const proc = spawn(PY, ["-m", "depthrank.cli", "serve", ...args], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  proc.stderr?.on("data", () => {});
  return proc;
}

function stopServer(proc: ChildProcess): Promise<void> {
  return new Promise((resolve) => {
    proc.once("exit", () => resolve());
    proc.kill("SIGTERM");
    setTimeout(() => {
      if (proc.exitCode === null) proc.kill("SIGKILL");
      resolve();
    }, 4000);
  });
}

function loadImage(app: AnnotationApp): void {
  const img = app.root.querySelector("img");
  if (!img) throw new Error("no task image rendered");
  Object.defineProperty(img, "naturalWidth", { value: 48, configurable: true });
  Object.defineProperty(img, "naturalHeight", { value: 48, configurable: true });
  img.dispatchEvent(new Event("load"));
}

async function pressAndSettle(app: AnnotationApp, key: string): Promise<void> {
  const before = app.envelope?.task;
  document.dispatchEvent(new KeyboardEvent("keydown", { key }));
  // wait for the submit + next-task round trip to finish: either a
  // terminal screen or a new rendered envelope
  for (let i = 0; i < 400; i += 1) {
    await new Promise((r) => setTimeout(r, 5));
    if (app.screen !== "task") return;
    if (app.envelope && app.envelope.task !== before) return;
  }
  throw new Error("submission did not settle");
}

describe("against the live service", () => {
  const dir = mkdtempSync(join(tmpdir(), "drui-"));
  const port = 8612 + Math.floor(Math.random() * 200);
  const base = `http://127.0.0.1:${port}`;
  let server: ChildProcess;
  const logPath = join(dir, "events.jsonl");

  beforeAll(async () => {
    pairFile(join(dir, "pairs.csv"), 20);
    server = startServer(["--pairs", join(dir, "pairs.csv"), "--p-gold", "0",
                          "--port", String(port), "--log", logPath]);
    await waitForServer(base);
  }, 30000);

  afterAll(async () => {
    await stopServer(server);
  });

  it("completes 20 tasks by keypress; the server stores exactly 20 answers "
     + "with faithful response times", async () => {
    document.body.innerHTML = "";
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new AnnotationApp(root, new AnnotationClient({ baseUrl: base }));
    await app.start();

    const scripted: number[] = [];
    for (let i = 0; i < 20; i += 1) {
      expect(app.screen).toBe("task");
      loadImage(app);
      const delay = 60 + (i % 5) * 25; // 60..160ms
      scripted.push(delay);
      await new Promise((r) => setTimeout(r, delay));
      await pressAndSettle(app, String(1 + (i % 2)));
    }
    expect(app.answered).toBe(20);
    expect(document.querySelector(".screen-completed")).not.toBeNull();

    const stats = await (await fetch(`${base}/api/stats`)).json();
    expect(stats.answers).toBe(20);
    expect(stats.pending_second).toBe(20); // each task waits for worker two

    const events = readFileSync(logPath, "utf8").trim().split("\n").map((l) => JSON.parse(l));
    const answers = events.filter((e) => e.t === "answer");
    expect(answers).toHaveLength(20);
    answers.forEach((event, i) => {
      expect(Math.abs(event.ms - scripted[i])).toBeLessThanOrEqual(50);
    });
    app.stop();
  }, 60000);
});

describe("quality-control rejection flow", () => {
  const dir = mkdtempSync(join(tmpdir(), "drui-gold-"));
  const port = 8850 + Math.floor(Math.random() * 200);
  const base = `http://127.0.0.1:${port}`;
  let server: ChildProcess;

  beforeAll(async () => {
    pairFile(join(dir, "pairs.csv"), 5);
    pairFile(join(dir, "gold.csv"), 25, 1); // verified answer: point 1 closer
    server = startServer(["--pairs", join(dir, "pairs.csv"),
                          "--gold", join(dir, "gold.csv"),
                          "--p-gold", "1", "--port", String(port)]);
    await waitForServer(base);
  }, 30000);

  afterAll(async () => {
    await stopServer(server);
  });

  it("reaches the 403 rejection screen after failing gold probes", async () => {
    document.body.innerHTML = "";
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new AnnotationApp(root, new AnnotationClient({ baseUrl: base }));
    await app.start();

    // Every served task is gold (p_gold=1) with truth "point 1"; answering
    // '2' tanks the running accuracy; the 85% rule fires at probe 20.
    for (let i = 0; i < 21 && app.screen === "task"; i += 1) {
      loadImage(app);
      await new Promise((r) => setTimeout(r, 10));
      await pressAndSettle(app, "2");
    }
    expect(app.screen).toBe("rejected");
    expect(document.querySelector(".screen-rejected")).not.toBeNull();
    app.stop();
  }, 60000);
});
