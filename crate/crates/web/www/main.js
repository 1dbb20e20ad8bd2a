import init, { beamPattern, binFrequency, simulateScene } from "./pkg/ufe_web.js";

const COLORS = ["#1f77b4", "#d62728"];
const status = document.getElementById("status");
const beamForm = document.getElementById("beam-form");
const sceneForm = document.getElementById("scene-form");

function field(form, name) {
  return form.querySelector(`[name=${name}]`);
}

function drawPolar(db) {
  const c = document.getElementById("polar");
  const g = c.getContext("2d");
  const cx = c.width / 2, cy = c.height / 2, r = cx - 20, floor = -40;
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#ddd";
  g.fillStyle = "#888";
  g.font = "11px sans-serif";
  for (const level of [0, -10, -20, -30]) {
    const rr = r * (level - floor) / -floor;
    g.beginPath();
    g.arc(cx, cy, rr, 0, 2 * Math.PI);
    g.stroke();
    g.fillText(`${level} dB`, cx + 3, cy - rr + 12);
  }
  for (let a = 0; a < 360; a += 30) {
    const t = a * Math.PI / 180;
    g.beginPath();
    g.moveTo(cx, cy);
    g.lineTo(cx + r * Math.cos(t), cy - r * Math.sin(t));
    g.stroke();
  }
  g.strokeStyle = COLORS[0];
  g.lineWidth = 2;
  g.beginPath();
  for (let a = 0; a <= 360; a++) {
    const v = Math.max(db[a % 360], floor);
    const rr = r * (v - floor) / -floor;
    const t = a * Math.PI / 180;
    const x = cx + rr * Math.cos(t), y = cy - rr * Math.sin(t);
    a === 0 ? g.moveTo(x, y) : g.lineTo(x, y);
  }
  g.stroke();
  g.lineWidth = 1;
}

function updateBeam() {
  const beams = Number(field(beamForm, "beams").value);
  const beamInput = field(beamForm, "beam");
  beamInput.max = beams - 1;
  const beam = Math.min(Number(beamInput.value), beams - 1);
  const freq = Number(field(beamForm, "freq").value);
  const f = binFrequency(freq);
  document.getElementById("freq-label").textContent = `${f.toFixed(1)}`;
  try {
    const out = beamPattern(field(beamForm, "design").value, beam, beams, freq,
                            Number(field(beamForm, "loading").value));
    drawPolar(out.slice(0, 360));
    const steer = beam * 360 / beams;
    document.getElementById("beam-info").textContent =
      `beam ${beam} steered to ${steer.toFixed(1)}°, ${f.toFixed(1)} Hz; white-noise gain ${out[360].toFixed(2)} dB`;
    status.textContent = "";
  } catch (e) {
    status.textContent = String(e);
  }
}

function drawCurves(scene, truth) {
  const c = document.getElementById("curves");
  const g = c.getContext("2d");
  const pad = 30, w = c.width - 2 * pad, h = c.height - 2 * pad;
  const x = (a) => pad + w * a / 350;
  const y = (v) => pad + h * (1 - v);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#ccc";
  g.strokeRect(pad, pad, w, h);
  g.fillStyle = "#888";
  g.font = "11px sans-serif";
  for (let a = 0; a <= 350; a += 60) g.fillText(`${a}°`, x(a) - 8, c.height - 10);
  const line = (vals, color, dash) => {
    g.strokeStyle = color;
    g.setLineDash(dash);
    g.beginPath();
    vals.forEach((v, i) => (i ? g.lineTo(x(i * 10), y(v)) : g.moveTo(x(0), y(v))));
    g.stroke();
    g.setLineDash([]);
  };
  const curves = scene.curves;
  const n = curves.length / 36;
  for (let k = 0; k < n; k++) line(Array.from(curves.slice(36 * k, 36 * k + 36)), COLORS[k], []);
  line(Array.from(scene.features, (v) => (v + 1) / 2), "#555", [4, 3]);
  g.strokeStyle = "#2a2";
  for (const a of truth) {
    g.beginPath();
    g.moveTo(x(a), pad);
    g.lineTo(x(a), pad + h);
    g.stroke();
  }
}

function drawSpectrogram(scene) {
  const c = document.getElementById("spec");
  const g = c.getContext("2d");
  const { frames, bins } = scene;
  const data = scene.spectrogram;
  const img = g.createImageData(frames, bins);
  for (let t = 0; t < frames; t++) {
    for (let f = 0; f < bins; f++) {
      const v = Math.max(0, Math.min(1, (data[t * bins + f] + 60) / 60));
      const i = ((bins - 1 - f) * frames + t) * 4;
      img.data[i] = 255 * v;
      img.data[i + 1] = 255 * v * v;
      img.data[i + 2] = 80 * (1 - v);
      img.data[i + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(frames, bins);
  tmp.getContext("2d").putImageData(img, 0, 0);
  g.imageSmoothingEnabled = false;
  g.drawImage(tmp, 0, 0, c.width, c.height);
}

function runScene() {
  const truth = [Number(field(sceneForm, "a1").value)];
  if (field(sceneForm, "two").checked) truth.push(Number(field(sceneForm, "a2").value));
  const info = document.getElementById("scene-info");
  info.textContent = "simulating…";
  // let the message paint before the synchronous work
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const scene = simulateScene(Float64Array.from(truth), Number(field(sceneForm, "t60").value),
                                  Number(field(sceneForm, "seed").value));
      const ms = performance.now() - t0;
      drawCurves(scene, truth);
      drawSpectrogram(scene);
      info.textContent = `true ${truth.map((a) => a + "°").join(", ")}; estimated ` +
        `${Array.from(scene.estimates, (a) => a + "°").join(", ")} (${ms.toFixed(0)} ms)`;
      status.textContent = "";
    } catch (e) {
      info.textContent = "";
      status.textContent = String(e);
    }
  }, 10);
}

await init();
status.textContent = "";
beamForm.addEventListener("input", updateBeam);
field(sceneForm, "run").addEventListener("click", runScene);
updateBeam();
runScene();
