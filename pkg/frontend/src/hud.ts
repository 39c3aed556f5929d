/** DOM overlay: banner, recording dot, red flag, solution readout,
 * episode counter, toasts.  One update(view) writes everything; all
 * state comes from the store's derived view. */

import { ViewState } from "./store";

export class Hud {
  readonly root: HTMLElement;
  private readonly banner: HTMLElement;
  private readonly dot: HTMLElement;
  private readonly flag: HTMLElement;
  private readonly mode: HTMLElement;
  private readonly solution: HTMLElement;
  private readonly gripper: HTMLElement;
  private readonly episodes: HTMLElement;
  private readonly toasts: HTMLElement;

  constructor(doc: Document) {
    this.root = doc.createElement("div");
    this.root.id = "hud";
    this.root.innerHTML = `
      <div class="banner" hidden></div>
      <div class="status">
        <span class="dot"></span>
        <span class="flag">&#9873;</span>
        <span class="mode"></span>
        <span class="solution"></span>
        <span class="gripper"></span>
        <span class="episodes"></span>
      </div>
      <div class="toasts"></div>`;
    const pick = (selector: string): HTMLElement => {
      const el = this.root.querySelector<HTMLElement>(selector);
      if (!el) throw new Error(`hud is missing ${selector}`);
      return el;
    };
    this.banner = pick(".banner");
    this.dot = pick(".dot");
    this.flag = pick(".flag");
    this.mode = pick(".mode");
    this.solution = pick(".solution");
    this.gripper = pick(".gripper");
    this.episodes = pick(".episodes");
    this.toasts = pick(".toasts");
  }

  update(view: ViewState): void {
    this.banner.hidden = view.banner === null;
    this.banner.textContent = view.banner ?? "";
    this.dot.classList.toggle("on", view.recordingActive);
    this.flag.classList.toggle("red", view.endEffectorRed);
    this.mode.textContent = view.mode;
    this.solution.textContent =
      view.solutionCount > 0
        ? `branch ${view.solutionIndex + 1}/${view.solutionCount}`
        : "";
    this.gripper.textContent = view.gripperClosed ? "grip closed" : "grip open";
    this.episodes.textContent = `episodes: ${view.episodesSaved}`;
    this.toasts.replaceChildren(
      ...view.toasts.map((text) => {
        const el = this.root.ownerDocument.createElement("div");
        el.className = "toast";
        el.textContent = text;
        return el;
      }),
    );
  }
}

export const HUD_CSS = `
#hud { position: fixed; inset: 0; pointer-events: none; color: #dde;
       font: 13px/1.5 system-ui, sans-serif; }
#hud .banner { position: absolute; top: 0; width: 100%; text-align: center;
               background: #a33; color: #fff; padding: 4px 0; }
#hud .status { position: absolute; bottom: 8px; left: 12px;
               display: flex; gap: 14px; align-items: center; }
#hud .dot { width: 10px; height: 10px; border-radius: 50%; background: #444;
            display: inline-block; }
#hud .dot.on { background: #e33; }
#hud .flag { color: #667; }
#hud .flag.red { color: #f33; }
#hud .toasts { position: absolute; bottom: 8px; right: 12px;
               text-align: right; }
#hud .toast { background: rgba(20, 24, 32, 0.85); margin-top: 4px;
              padding: 3px 8px; border-radius: 4px; }
`;
