import { AnnotationClient } from "./client.js";
import { Choice, TaskEnvelope } from "./types.js";

const KEY_TO_CHOICE: Record<string, Choice> = { "1": 1, "2": 2, "3": 3 };

const MARKER_RADIUS = 14; // px, also the clamping margin

export interface AppOptions {
  /** monotonic clock in ms; injectable for tests */
  now?: () => number;
}

type Screen = "idle" | "task" | "completed" | "rejected" | "image_error";

/**
 * Keyboard-driven annotation view: an image with two numbered markers.
 * Keys 1/2 pick the closer point, 3 is "hard to tell". The response time
 * runs from image load completion to the keypress, so network latency
 * never pollutes it. One submission per task, no matter how keys mash.
 */
export class AnnotationApp {
  readonly root: HTMLElement;
  readonly client: AnnotationClient;
  worker: string | null = null;
  envelope: TaskEnvelope | null = null;
  displayStart: number | null = null;
  answered = 0;
  screen: Screen = "idle";
  private busy = false;
  private submitted = new Set<string>();
  private now: () => number;
  private img: HTMLImageElement | null = null;
  private stage: HTMLElement | null = null;
  private keyListener: (ev: KeyboardEvent) => void;
  private resizeListener: () => void;

  constructor(root: HTMLElement, client: AnnotationClient, opts: AppOptions = {}) {
    this.root = root;
    this.client = client;
    this.now = opts.now ?? (() => performance.now());
    this.keyListener = (ev) => void this.onKey(ev.key);
    this.resizeListener = () => this.positionMarkers();
  }

  async start(): Promise<void> {
    this.root.ownerDocument.addEventListener("keydown", this.keyListener);
    const win = this.root.ownerDocument.defaultView;
    win?.addEventListener("resize", this.resizeListener);
    this.worker = await this.client.register();
    await this.nextTask();
  }

  stop(): void {
    this.root.ownerDocument.removeEventListener("keydown", this.keyListener);
    this.root.ownerDocument.defaultView?.removeEventListener("resize", this.resizeListener);
  }

  async nextTask(): Promise<void> {
    if (!this.worker) throw new Error("start() first");
    this.envelope = null;
    this.displayStart = null;
    const result = await this.client.fetchTask(this.worker);
    if (result.status === "done") {
      this.showScreen("completed", `All done - ${this.answered} answers. Thank you!`);
      return;
    }
    if (result.status === "rejected") {
      this.showScreen("rejected", "This session was closed by quality control.");
      return;
    }
    this.renderTask(result.envelope);
  }

  renderTask(envelope: TaskEnvelope): void {
    const doc = this.root.ownerDocument;
    this.root.textContent = "";
    this.screen = "task";
    this.envelope = envelope;
    this.displayStart = null;

    const stage = doc.createElement("div");
    stage.className = "stage";
    stage.style.position = "relative";
    stage.style.display = "inline-block";
    this.stage = stage;

    const img = doc.createElement("img");
    img.className = "scene";
    img.alt = "scene to annotate";
    img.style.display = "block";
    this.img = img;
    img.addEventListener("load", () => this.onImageReady());
    img.addEventListener("error", () => this.onImageError());
    stage.appendChild(img);

    for (const label of ["1", "2"]) {
      const marker = doc.createElement("div");
      marker.className = `marker marker-${label}`;
      marker.textContent = label;
      marker.style.position = "absolute";
      marker.style.width = `${2 * MARKER_RADIUS}px`;
      marker.style.height = `${2 * MARKER_RADIUS}px`;
      marker.style.borderRadius = "50%";
      marker.style.visibility = "hidden";
      stage.appendChild(marker);
    }

    const legend = doc.createElement("p");
    legend.className = "legend";
    legend.textContent = "Which point is closer? Press '1' or '2' - or '3' = hard to tell.";

    const status = doc.createElement("p");
    status.className = "status";
    status.textContent = `${this.answered} answered`;

    this.root.append(stage, legend, status);
    img.src = envelope.image;
    if (img.complete && img.naturalWidth > 0) this.onImageReady();
  }

  private onImageReady(): void {
    if (this.screen !== "task") return;
    this.positionMarkers();
    this.displayStart = this.now();
  }

  private onImageError(): void {
    this.screen = "image_error";
    this.displayStart = null;
    const doc = this.root.ownerDocument;
    const note = doc.createElement("p");
    note.className = "error-note";
    note.textContent = "The image failed to load.";
    const skip = doc.createElement("button");
    skip.className = "skip";
    skip.textContent = "Skip this task";
    skip.addEventListener("click", () => void this.nextTask());
    this.root.append(note, skip);
  }

  /** Map task coordinates to displayed pixels; keep markers inside view. */
  positionMarkers(): void {
    if (!this.envelope || !this.img || !this.stage) return;
    const natural = { w: this.img.naturalWidth || 1, h: this.img.naturalHeight || 1 };
    const shown = {
      w: this.img.clientWidth || natural.w,
      h: this.img.clientHeight || natural.h,
    };
    const sx = shown.w / natural.w;
    const sy = shown.h / natural.h;
    const markers = this.stage.querySelectorAll<HTMLElement>(".marker");
    this.envelope.points.forEach(([x, y], idx) => {
      const marker = markers[idx];
      if (!marker) return;
      const cx = Math.min(Math.max(x * sx, MARKER_RADIUS), Math.max(shown.w - MARKER_RADIUS, MARKER_RADIUS));
      const cy = Math.min(Math.max(y * sy, MARKER_RADIUS), Math.max(shown.h - MARKER_RADIUS, MARKER_RADIUS));
      marker.style.left = `${cx - MARKER_RADIUS}px`;
      marker.style.top = `${cy - MARKER_RADIUS}px`;
      marker.style.visibility = "visible";
    });
  }

  async onKey(key: string): Promise<void> {
    const choice = KEY_TO_CHOICE[key];
    if (!choice) return; // other keys ignored
    if (this.screen !== "task" || !this.envelope || !this.worker) return;
    if (this.busy || this.displayStart === null) return; // not displayed yet
    if (this.submitted.has(this.envelope.task)) return;
    const responseMs = this.now() - this.displayStart;
    this.busy = true;
    this.submitted.add(this.envelope.task);
    try {
      await this.client.submitAnswer(this.worker, this.envelope, choice, responseMs);
      this.answered += 1;
      await this.nextTask();
    } catch (err) {
      if ((err as Error).message === "worker rejected") {
        this.showScreen("rejected", "This session was closed by quality control.");
      } else {
        this.showScreen("idle", `Submission failed: ${(err as Error).message}`);
      }
    } finally {
      this.busy = false;
    }
  }

  private showScreen(screen: Screen, message: string): void {
    this.screen = screen;
    this.envelope = null;
    this.displayStart = null;
    const doc = this.root.ownerDocument;
    this.root.textContent = "";
    const panel = doc.createElement("div");
    panel.className = `screen screen-${screen}`;
    panel.textContent = message;
    this.root.appendChild(panel);
  }
}
