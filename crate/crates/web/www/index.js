import init, { softmax, synthetic_image, Student } from "./pkg/kdlens_web.js";

const $ = (id) => document.getElementById(id);
const SIZE = 32;
let student = null;

function draw(canvas, rgba) {
  const small = new OffscreenCanvas(SIZE, SIZE);
  small.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(small, 0, 0, canvas.width, canvas.height);
}

function bars(target, probs, names) {
  target.innerHTML = "";
  probs.forEach((p, i) => {
    const row = document.createElement("div");
    row.textContent = `${names ? names[i] : i}: ${p.toFixed(4)}`;
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.width = `${(p * 100).toFixed(1)}%`;
    row.appendChild(bar);
    target.appendChild(row);
  });
}

function sampleArgs() {
  return [Number($("class").value), Number($("noise").value), Number($("seed").value)];
}

function updateSoftmax() {
  const t = Number($("temp").value);
  $("temp-v").textContent = t;
  const z = $("logits").value.split(",").map(Number);
  try {
    bars($("bars"), softmax(Float64Array.from(z), t));
  } catch (e) {
    $("bars").textContent = e.message;
  }
}

function updateSample() {
  try {
    draw($("sample"), synthetic_image(...sampleArgs()));
  } catch (e) {
    $("status").textContent = e.message;
    return;
  }
  if (student) updateExplanation();
}

function updateExplanation() {
  const args = sampleArgs();
  try {
    draw($("overlay"), student.explain(...args, $("method").value, Number($("layer").value)));
    const names = Array.from($("class").options, (o) => o.text);
    bars($("probs"), student.probabilities(...args), names);
  } catch (e) {
    $("status").textContent = e.message;
  }
}

await init();
$("logits").addEventListener("input", updateSoftmax);
$("temp").addEventListener("input", updateSoftmax);
for (const id of ["class", "noise", "seed"]) $(id).addEventListener("input", updateSample);
for (const id of ["method", "layer"]) $(id).addEventListener("input", () => student && updateExplanation());
$("train").addEventListener("click", () => {
  $("status").textContent = "training...";
  // let the status paint before the blocking call
  setTimeout(() => {
    const t0 = performance.now();
    student = new Student(Number($("seed").value), 3);
    $("status").textContent =
      `val accuracy ${student.val_accuracy.toFixed(3)} in ${((performance.now() - t0) / 1000).toFixed(1)}s`;
    updateExplanation();
  }, 20);
});
updateSoftmax();
updateSample();
