import init, { WebDemo } from "./pkg/stars_web.js";

const STEPS_PER_FRAME = 100;
const params = new URLSearchParams(location.search);
const size = Number(params.get("size") ?? 8);
const category = params.get("category") ?? "far";
const seed = Number(params.get("seed") ?? 1);

const canvas = document.getElementById("grid");
const ctx = canvas.getContext("2d");
const slider = document.getElementById("gamma");
const sliderValue = document.getElementById("gamma-value");
const status = document.getElementById("status");
const errorBox = document.getElementById("error");
const pauseButton = document.getElementById("pause");

await init();
const gamma = () => Math.pow(10, Number(slider.value));
const demo = new WebDemo(size, category, seed, gamma(), 0.01);
let snap = send({ type: "get_snapshot" });
let running = true;

// Every interaction is a protocol message; errors are shown, snapshots drawn.
function send(msg) {
  const reply = JSON.parse(demo.handle(JSON.stringify(msg)));
  if (reply.type === "error") {
    errorBox.textContent = `${reply.code}: ${reply.msg}`;
    return snap;
  }
  errorBox.textContent = "";
  return reply;
}

function cellSize() {
  return canvas.width / snap.grid.size;
}

function draw() {
  const c = cellSize();
  const heat = snap.heatmap;
  const max = Math.max(1, ...heat.flat());
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let y = 0; y < heat.length; y++) {
    for (let x = 0; x < heat[y].length; x++) {
      const v = Math.log1p(heat[y][x]) / Math.log1p(max);
      ctx.fillStyle = `rgb(${255 - 200 * v}, ${255 - 120 * v}, 255)`;
      ctx.fillRect(x * c, y * c, c, c);
    }
  }
  ctx.fillStyle = "#333";
  for (const [x, y] of snap.grid.walls) ctx.fillRect(x * c, y * c, c, c);
  const outline = (cells, color) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 3;
    for (const [x, y] of cells) ctx.strokeRect(x * c + 2, y * c + 2, c - 4, c - 4);
  };
  snap.objectives.forEach((o, i) => outline(o.buchi, i === 0 ? "#1a7f37" : "#d4760a"));
  const [ax, ay] = snap.agent;
  ctx.fillStyle = "#c00";
  ctx.beginPath();
  ctx.arc((ax + 0.5) * c, (ay + 0.5) * c, c / 4, 0, 2 * Math.PI);
  ctx.fill();
  const m = snap.metrics;
  const visits = snap.objectives.map((o) => `#${o.id}: ${o.visits}`).join("  ");
  status.textContent =
    `step ${snap.step}\nbuchi frequency ${m.buchi_freq.toFixed(4)}\n` +
    `avg reward ${m.avg_reward.toFixed(4)} (gap ${m.reward_gap.toFixed(4)})\n` +
    `target visits  ${visits}`;
}

function frame() {
  if (running) snap = send({ type: "step", n: STEPS_PER_FRAME });
  draw();
  requestAnimationFrame(frame);
}

function showGamma() {
  sliderValue.textContent = gamma().toFixed(3);
}

slider.addEventListener("input", () => {
  showGamma();
  snap = send({ type: "set_params", gamma: gamma() });
});

canvas.addEventListener("click", (ev) => {
  const r = canvas.getBoundingClientRect();
  const c = cellSize() * (r.width / canvas.width);
  const x = Math.floor((ev.clientX - r.left) / c);
  const y = Math.floor((ev.clientY - r.top) / c);
  snap = send({ type: "add_objective", buchi: [[x, y]] });
});

pauseButton.addEventListener("click", () => {
  running = !running;
  pauseButton.textContent = running ? "pause" : "run";
});

showGamma();
frame();
