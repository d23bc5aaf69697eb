import init, { alternating, blocked_ogd, signatures } from "./pkg/phe_browser_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, series, marks = []) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.values);
  let lo = Math.min(0, ...all);
  let hi = Math.max(...all);
  if (hi === lo) hi = lo + 1;
  const n = Math.max(...series.map((s) => s.values.length));
  const x = (i) => pad + (i / Math.max(n - 1, 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo)) * (h - 2 * pad);

  ctx.strokeStyle = "#eee";
  for (const m of marks) {
    ctx.beginPath();
    ctx.moveTo(x(m), pad);
    ctx.lineTo(x(m), h - pad);
    ctx.stroke();
  }
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, y(0));
  ctx.lineTo(w - pad, y(0));
  ctx.stroke();
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.fillText(hi.toFixed(2), 2, y(hi) + 4);
  ctx.fillText(lo.toFixed(2), 2, y(lo) + 4);
  ctx.fillText(String(n - 1), w - pad - 10, h - pad + 14);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
  }
}

const fmt = (v) => "(" + v.map((a) => a.toFixed(3)).join(", ") + ")";

function guard(out, f) {
  try {
    out.classList.remove("err");
    f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
  }
}

function runAlternating() {
  const out = $("alt-out");
  out.textContent = "running...";
  setTimeout(() =>
    guard(out, () => {
      const t = JSON.parse(
        alternating(num("alt-repeats"), num("alt-cycles"), num("alt-eta"), num("alt-epochs"), BigInt(num("alt-seed"))),
      );
      plot(
        $("alt-plot"),
        [
          { values: t.ogd, color: "#d62728" },
          { values: t.bayes, color: "#1f77b4" },
          { values: t.phe, color: "#2ca02c" },
        ],
        t.switches,
      );
      const peak = (trace) => Math.max(0, ...t.recurrences.map((s) => trace[s]));
      out.textContent =
        `error when a seen item returns: OGD ${peak(t.ogd).toFixed(4)}, Bayes ${peak(t.bayes).toExponential(2)}, PHE ${peak(t.phe).toFixed(4)}\n` +
        `final e: OGD ${fmt(t.ogd_final)}  Bayes mean ${fmt(t.bayes_final_mean)}  PHE mean ${fmt(t.phe_final_mean)}`;
    }),
  );
}

function runOgd() {
  const out = $("ogd-out");
  guard(out, () => {
    const states = JSON.parse(blocked_ogd(num("ogd-eta"), num("ogd-n")));
    plot(
      $("ogd-plot"),
      [0, 1, 2].map((k, i) => ({ values: states.map((s) => s[k]), color: ["#9467bd", "#8c564b", "#e377c2"][i] })),
      [num("ogd-n")],
    );
    const e = states[states.length - 1];
    const f0 = e[0] + e[1];
    out.textContent = `final e ${fmt(e)}  f(item 0) = ${f0.toFixed(4)}  squared error on item 0 = ${((f0 - 1) ** 2).toFixed(4)}`;
  });
}

function runSignatures() {
  const out = $("sig-out");
  guard(out, () => {
    const col = $("sig-col").value.trim();
    const keys = $("sig-items")
      .value.split("\n")
      .map((v) => v.trim())
      .filter((v) => v)
      .map((v) => (col ? `${col}\u001f${v}` : v))
      .join("\n");
    const r = JSON.parse(
      signatures(keys, num("sig-b"), num("sig-k"), num("sig-p"), BigInt(num("sig-seed"))),
    );
    const name = (s) => s.replace("\u001f", "=");
    const lines = r.items.map((it) => `${name(it.item).padEnd(24)} rows [${it.rows.join(", ")}]  w ${it.weight_row}`);
    lines.push("");
    lines.push(`pairs sharing a bucket: ${r.partial_collisions}`);
    lines.push(
      r.full_collisions.length
        ? "identical signatures: " + r.full_collisions.map(([a, b]) => `${name(r.items[a].item)} / ${name(r.items[b].item)}`).join(", ")
        : "no identical signatures",
    );
    out.textContent = lines.join("\n");
  });
}

await init();
$("alt-run").onclick = runAlternating;
$("ogd-run").onclick = runOgd;
$("sig-run").onclick = runSignatures;
runOgd();
runSignatures();
