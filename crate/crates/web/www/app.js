import init, { pyramid_layout, PruneSession } from './pkg/pyrprune_web.js';

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

let layout = null;
let spots = [];
let session = null;

function scale() {
  const c = $('layout');
  return Math.min(c.width / layout.width, c.height / layout.height);
}

function refreshLayout() {
  try {
    layout = JSON.parse(pyramid_layout(num('width'), num('height'), num('tile'), num('minside')));
    $('status').textContent = '';
  } catch (e) {
    $('status').textContent = e.message;
    return;
  }
  const sel = $('level');
  const keep = sel.value;
  sel.innerHTML = '';
  for (const l of layout.levels) {
    const o = document.createElement('option');
    o.value = l.p;
    o.textContent = `${l.p}: ${l.rows}x${l.cols}`;
    sel.appendChild(o);
  }
  if ([...sel.options].some((o) => o.value === keep)) sel.value = keep;
  draw();
}

function draw() {
  const c = $('layout');
  const ctx = c.getContext('2d');
  const s = scale();
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.fillStyle = '#f4f4f4';
  ctx.fillRect(0, 0, layout.width * s, layout.height * s);

  const level = layout.levels.find((l) => l.p === Number($('level').value)) || layout.levels[0];
  const it = session && JSON.parse(session.summary()).levels.find((x) => x.level === level.p);
  const encoded = new Set(it ? it.encoded.map(([r, c]) => `${r},${c}`) : []);
  level.tiles.forEach(([x0, y0, x1, y1], i) => {
    const r = Math.floor(i / level.cols);
    const col = i % level.cols;
    if (encoded.has(`${r},${col}`)) {
      ctx.fillStyle = 'rgba(40, 120, 220, 0.25)';
      ctx.fillRect(x0 * s, y0 * s, (x1 - x0) * s, (y1 - y0) * s);
    }
    ctx.strokeStyle = '#888';
    ctx.strokeRect(x0 * s, y0 * s, (x1 - x0) * s, (y1 - y0) * s);
  });

  ctx.fillStyle = '#d22';
  for (const p of spots) {
    ctx.beginPath();
    ctx.arc(p.x * s, p.y * s, Math.max(3, p.sigma * s), 0, 2 * Math.PI);
    ctx.globalAlpha = 0.35;
    ctx.fill();
    ctx.globalAlpha = 1;
  }
}

function drawHeatmap() {
  const bytes = session.heatmap();
  const view = new DataView(bytes.buffer, bytes.byteOffset);
  const w = view.getUint32(0, true);
  const h = view.getUint32(4, true);
  const img = new ImageData(new Uint8ClampedArray(bytes.slice(8)), w, h);
  const off = document.createElement('canvas');
  off.width = w;
  off.height = h;
  off.getContext('2d').putImageData(img, 0, 0);
  const c = $('heat');
  const ctx = c.getContext('2d');
  const s = Math.min(c.width / w, c.height / h);
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, w * s, h * s);
}

function showCost() {
  const c = JSON.parse(session.cost());
  const rows = [
    ['', 'encoder tokens', 'LLM tokens', 'TFLOPs'],
    ['pyramid', c.pyramid.encoder_tokens, c.pyramid.llm_tokens, c.pyramid.total_tflops.toFixed(2)],
    [`grid crop (${c.grid_crop.tiles} tiles)`, c.grid_crop.encoder_tokens, c.grid_crop.llm_tokens, c.grid_crop.tflops.toFixed(2)],
  ];
  $('cost').innerHTML = rows
    .map((r, i) => `<tr>${r.map((v) => (i === 0 ? `<th>${v}</th>` : `<td>${v}</td>`)).join('')}</tr>`)
    .join('');
}

function runPrune() {
  if (session) session.free();
  session = null;
  const req = {
    width: num('width'),
    height: num('height'),
    tile_size: num('tile'),
    min_side: num('minside'),
    spots,
    alpha: num('alpha'),
    n_max: num('nmax'),
    concat: $('concat').checked,
  };
  try {
    session = new PruneSession(JSON.stringify(req));
  } catch (e) {
    $('status').textContent = e.message;
    return;
  }
  $('status').textContent = spots.length ? '' : 'no hot spots: every score is zero, ties go to the first tokens';
  $('summary').textContent = JSON.stringify(JSON.parse(session.summary()), null, 1);
  drawHeatmap();
  showCost();
  draw();
}

$('layout').addEventListener('click', (ev) => {
  const r = ev.target.getBoundingClientRect();
  const s = scale();
  const x = (ev.clientX - r.left) / s;
  const y = (ev.clientY - r.top) / s;
  if (x > layout.width || y > layout.height) return;
  spots.push({ x, y, sigma: num('sigma'), weight: 1 });
  draw();
});

for (const id of ['width', 'height', 'tile', 'minside']) $(id).addEventListener('change', refreshLayout);
$('level').addEventListener('change', draw);
$('run').addEventListener('click', runPrune);
$('clear').addEventListener('click', () => {
  spots = [];
  draw();
});

await init();
refreshLayout();
