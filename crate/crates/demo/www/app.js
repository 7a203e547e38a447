import init, { simulate, failureThreshold, wavePlan } from './pkg/binospec_demo.js';

const PRESETS = {
  node: `# One 1 GB job packed on node 0; node 0 dies halfway through its maps.
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "1GB"
home_node = 0

[[faults]]
at = "map_progress=0.5"
kind = "node_fail"
target = "node:0"
job = 0
`,
  mof: `# A finished map's output vanishes before the reducer fetches it.
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "1GB"
home_node = 0

[[faults]]
at = "map_progress=1.0"
kind = "mof_loss"
target = "map:0"
job = 0
`,
  disk: `# Map 0 hits a disk exception right after its third spill.
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "1GB"
home_node = 0

[[faults]]
at = "spill=3"
kind = "disk_exception"
target = "map:0"
job = 0
`,
  slow: `# Node 2 slows to a crawl while a 10 GB job runs.
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "10GB"

[[faults]]
at = 10000
kind = "node_slow"
factor = 20.0
duration_ms = 400000
target = "node:2"
`,
};

const $ = (id) => document.getElementById(id);

function fmtMs(ms) {
  return ms >= 10000 ? `${(ms / 1000).toFixed(1)} s` : `${Math.round(ms)} ms`;
}

// Packs each node's attempts into lanes so overlapping ones stack.
function lanes(attempts, nodes) {
  const perNode = Array.from({ length: nodes }, () => []);
  const placed = [];
  for (const a of [...attempts].sort((x, y) => x.start - y.start)) {
    const ends = perNode[a.node];
    let lane = ends.findIndex((end) => end <= a.start);
    if (lane < 0) { lane = ends.length; ends.push(0); }
    ends[lane] = a.end;
    placed.push({ ...a, lane });
  }
  return { placed, counts: perNode.map((l) => Math.max(l.length, 1)) };
}

function drawTimeline(canvas, run, span) {
  const { placed, counts } = lanes(run.attempts, run.nodes);
  const laneH = 5, gap = 6, left = 34, width = 900;
  const offsets = [];
  let y = 4;
  for (const c of counts) { offsets.push(y); y += c * laneH + gap; }
  canvas.width = width + left + 10;
  canvas.height = y + 16;
  const g = canvas.getContext('2d');
  const x = (t) => left + (t / span) * width;
  g.font = '11px sans-serif';
  g.fillStyle = '#555';
  offsets.forEach((o, n) => g.fillText(`n${n}`, 2, o + 9));
  for (const a of placed) {
    g.fillStyle = a.state === 'failed' || a.state === 'killed' ? '#bbb' : a.speculative ? '#e59a2f' : '#4a7fc1';
    g.fillRect(x(a.start), offsets[a.node] + a.lane * laneH, Math.max(x(a.end) - x(a.start), 1), laneH - 1);
  }
  g.strokeStyle = '#c0392b';
  for (const f of run.faults) {
    g.beginPath();
    g.moveTo(x(f.at), 0);
    g.lineTo(x(f.at), y);
    g.stroke();
  }
  g.fillStyle = '#555';
  for (let i = 0; i <= 4; i++) {
    const t = (span * i) / 4;
    g.fillText(fmtMs(t), Math.min(x(t), left + width - 40), y + 12);
  }
}

function jobsTable(run) {
  const rows = run.jobs.map((j) => `<tr><td>${j.job_id}</td><td>${(j.input_size / 2 ** 30).toFixed(1)} GB</td>`
    + `<td>${j.exec_time_ms == null ? 'unfinished' : fmtMs(j.exec_time_ms)}</td><td>${fmtMs(j.baseline_ms)}</td>`
    + `<td>${j.slowdown == null ? '' : j.slowdown.toFixed(2)}</td><td>${j.spec_tasks}</td></tr>`);
  return `<table><tr><th>job</th><th>input</th><th>time</th><th>fault-free</th><th>slowdown</th><th>extra attempts</th></tr>${rows.join('')}</table>`;
}

function runBoth() {
  $('sim-error').textContent = '';
  $('results').innerHTML = '';
  let runs;
  try {
    const seed = Math.max(0, parseInt($('seed').value, 10) || 0);
    runs = ['yarn', 'bino'].map((p) => JSON.parse(simulate($('scenario').value, p, seed)));
  } catch (e) {
    $('sim-error').textContent = e.message ?? String(e);
    return;
  }
  const span = Math.max(...runs.map((r) => r.end), 1);
  for (const run of runs) {
    const div = document.createElement('div');
    const faults = run.faults.map((f) => `${fmtMs(f.at)}: ${f.detail}`).join('; ') || 'none';
    const flagged = run.detections.map((d) => `${fmtMs(d.at)}: n${d.node} ${d.assessment}`).join('; ');
    div.innerHTML = `<h3>${run.policy}</h3><p>Faults: ${faults}${flagged ? `<br>Flagged: ${flagged}` : ''}</p>${jobsTable(run)}`;
    const canvas = document.createElement('canvas');
    div.appendChild(canvas);
    $('results').appendChild(div);
    drawTimeline(canvas, run, span);
  }
}

function explore() {
  $('th-error').textContent = '';
  const losses = $('losses').value.split(/[\s,]+/).filter(Boolean).map(Number);
  if (losses.some((v) => !Number.isInteger(v) || v < 0)) {
    $('th-error').textContent = 'losses must be whole milliseconds';
    return;
  }
  let out;
  try {
    out = JSON.parse(failureThreshold(new Uint32Array(losses), +$('window').value, +$('hb').value, +$('safety').value, +$('probe').value));
  } catch (e) {
    $('th-error').textContent = e.message ?? String(e);
    return;
  }
  const probe = fmtMs(+$('probe').value);
  const rows = out.steps.map((s) => `<tr><td>${s.loss == null ? 'start' : fmtMs(s.loss)}</td><td>${s.window.join(', ')}</td>`
    + `<td>${s.estimate == null ? '' : fmtMs(s.estimate)}</td><td>${fmtMs(s.threshold)}</td>`
    + `<td class="${s.probe_failed ? 'failed' : ''}">${s.probe_failed ? 'failed' : 'alive'}</td></tr>`);
  $('th-table').innerHTML = `<tr><th>recorded loss</th><th>window</th><th>next loss estimate</th><th>threshold</th><th>${probe} silence</th></tr>${rows.join('')}`;
}

function plan() {
  $('wave-error').textContent = '';
  let out;
  try {
    out = JSON.parse(wavePlan(+$('init').value, +$('mult').value, +$('stragglers').value));
  } catch (e) {
    $('wave-error').textContent = e.message ?? String(e);
    $('wave-bars').innerHTML = '';
    return;
  }
  const max = Math.max(...out.waves, 1);
  $('wave-bars').innerHTML = out.waves
    .map((w, i) => `<div class="bar" style="width:${Math.max((w / max) * 100, 4)}%">wave ${i}: ${w}</div>`)
    .join('') || '<p>No stragglers, no waves.</p>';
}

await init();
$('preset').addEventListener('change', () => { $('scenario').value = PRESETS[$('preset').value]; });
$('scenario').value = PRESETS.node;
$('run').addEventListener('click', runBoth);
for (const id of ['losses', 'window', 'hb', 'safety', 'probe']) $(id).addEventListener('input', explore);
for (const id of ['init', 'mult', 'stragglers']) $(id).addEventListener('input', plan);
runBoth();
explore();
plan();
