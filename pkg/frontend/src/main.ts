/** Browser entry point: fetch the arm and scene, open the session
 * socket, wire cursor + keyboard input, and run the render loop
 * decoupled from snapshot arrival (the store keeps only the latest). */

import { PerspectiveCamera, Scene, Vector3, WebGLRenderer } from "three";

import { CameraBasis, HandCursor, SampleStreamer, bindKeys } from "./input";
import { armSchema, healthSchema, PROTOCOL_VERSION, sceneInfoSchema } from "./protocol";
import { Hud, HUD_CSS } from "./hud";
import { StudioScene } from "./render";
import { SessionClient } from "./session";
import { Store } from "./store";

async function fetchJson(path: string): Promise<unknown> {
  const response = await fetch(path);
  if (!response.ok) throw new Error(`${path}: HTTP ${response.status}`);
  return response.json();
}

function cameraBasis(camera: PerspectiveCamera): CameraBasis {
  camera.updateMatrixWorld();
  return {
    right: new Vector3().setFromMatrixColumn(camera.matrixWorld, 0),
    up: new Vector3().setFromMatrixColumn(camera.matrixWorld, 1),
    forward: new Vector3()
      .setFromMatrixColumn(camera.matrixWorld, 2)
      .multiplyScalar(-1),
  };
}

async function boot(): Promise<void> {
  const health = healthSchema.parse(await fetchJson("/healthz"));
  if (health.protocol_version !== PROTOCOL_VERSION) {
    throw new Error(
      `server protocol ${health.protocol_version} != ${PROTOCOL_VERSION}`,
    );
  }
  const arm = armSchema.parse(await fetchJson("/arm"));
  const sceneInfo = sceneInfoSchema.parse(await fetchJson("/scene"));

  const style = document.createElement("style");
  style.textContent =
    HUD_CSS + "\nbody { margin: 0; background: #10141c; overflow: hidden; }";
  document.head.append(style);

  const store = new Store();
  const hud = new Hud(document);
  document.body.append(hud.root);

  const studio = new StudioScene(arm, sceneInfo.points);
  const scene = new Scene();
  scene.add(studio.root);

  const camera = new PerspectiveCamera(
    50,
    window.innerWidth / window.innerHeight,
    0.01,
    20,
  );
  camera.up.set(0, 0, 1);
  camera.position.set(0.75, -0.75, 0.55);
  camera.lookAt(0.2, 0, 0.12);

  const renderer = new WebGLRenderer({ antialias: true });
  renderer.setSize(window.innerWidth, window.innerHeight);
  document.body.append(renderer.domElement);
  window.addEventListener("resize", () => {
    camera.aspect = window.innerWidth / window.innerHeight;
    camera.updateProjectionMatrix();
    renderer.setSize(window.innerWidth, window.innerHeight);
  });

  const cursor = new HandCursor(new Vector3(0.25, 0.0, 0.2));
  const wsUrl =
    (location.protocol === "https:" ? "wss://" : "ws://") +
    location.host +
    "/session";
  let streamer: SampleStreamer | null = null;
  const session = new SessionClient(wsUrl, {
    onMessage: (message) => {
      store.apply(message);
      if (
        streamer === null &&
        message.kind === "Feedback" &&
        message.payload.event === "hello"
      ) {
        streamer = new SampleStreamer(
          cursor,
          (sample) => session.sendSample(sample),
          message.payload.sample_rate_hz,
        );
        streamer.start();
      }
    },
    onClose: () => {
      streamer?.stop();
      store.setConnection("disconnected");
    },
    onProtocolError: (error) => store.toast(`protocol: ${error.message}`),
  });

  const canvas = renderer.domElement;
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging || !session.connected) return;
    cursor.drag(
      ev.clientX - lastX,
      ev.clientY - lastY,
      cameraBasis(camera),
      ev.shiftKey,
    );
    lastX = ev.clientX;
    lastY = ev.clientY;
  });
  canvas.addEventListener("wheel", (ev) => {
    if (!session.connected) return;
    ev.preventDefault();
    cursor.wheel(-ev.deltaY / 100, cameraBasis(camera));
  });

  bindKeys(
    window,
    { mode: () => store.view().mode },
    {
      sendCommand: (command) => {
        try {
          session.sendCommand(command);
        } catch (exc) {
          store.toast(String(exc));
        }
      },
      setPinchClosed: (closed) => cursor.setPinchClosed(closed),
      enabled: () => session.connected,
    },
  );

  const frame = () => {
    const view = store.view();
    if (view.overlayQ) studio.updateRobot(view.overlayQ, view.basePose ?? undefined);
    if (view.overlayPose) studio.setEEMarker(view.overlayPose);
    studio.setRed(view.endEffectorRed);
    studio.setGhost(view.awaitingRealignment);
    studio.setCursor(cursor.position, cursor.orientation);
    hud.update(view);
    renderer.render(scene, camera);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

boot().catch((exc) => {
  const el = document.createElement("pre");
  el.style.color = "#f66";
  el.textContent = `failed to start: ${exc}`;
  document.body.append(el);
});
