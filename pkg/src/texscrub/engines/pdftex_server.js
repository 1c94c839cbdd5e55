// Long-lived pdfTeX service built on the emscripten texlive.js worker.
//
// Reads one JSON request per line on stdin and answers with one JSON line on
// stdout. Each request runs inside a fresh vm context so no TeX state leaks
// between compiles; the compiled script is shared, so only the first request
// pays for asm.js compilation.
'use strict';
const fs = require('fs');
const path = require('path');
const vm = require('vm');
const readline = require('readline');

const PKG = process.argv[2];
if (!PKG || !fs.existsSync(path.join(PKG, 'pdftex-worker.js'))) {
  process.stderr.write('usage: pdftex_server.js <texlive.js package dir>\n');
  process.exit(2);
}
const WORKER = path.join(PKG, 'pdftex-worker.js');
const script = new vm.Script(fs.readFileSync(WORKER, 'utf8'), {filename: WORKER});

// Host-side index of the TeX tree, built once.
const TREE = [];
(function walk(host, virt) {
  for (const ent of fs.readdirSync(host, {withFileTypes: true})) {
    const h = path.join(host, ent.name);
    const v = virt + '/' + ent.name;
    if (ent.isDirectory()) { TREE.push([v, null, 0]); walk(h, v); }
    else if (ent.isFile()) TREE.push([v, h, fs.statSync(h).size]);
  }
})(path.join(PKG, 'texlive'), '');

const fileCache = new Map();
function hostBytes(h) {
  let b = fileCache.get(h);
  if (!b) { b = fs.readFileSync(h); fileCache.set(h, b); }
  return b;
}

function fakeProcess(out) {
  const sink = {write: (s) => { out.push(String(s)); return true; }, once() {}, on() {}};
  return {
    argv: ['node', WORKER], env: {}, platform: 'linux', version: process.version,
    versions: process.versions, stdout: sink, stderr: sink,
    exit() {}, on() {}, nextTick: (f) => f(), cwd: () => '/',
  };
}

function pinnedDate(epochMs) {
  const Real = Date;
  class Pinned extends Real {
    constructor(...a) { if (a.length === 0) super(epochMs); else super(...a); }
    static now() { return epochMs; }
  }
  return Pinned;
}

class LogOverflow extends Error {}

function copyIn(g, host, virt) {
  for (const ent of fs.readdirSync(host, {withFileTypes: true})) {
    const h = path.join(host, ent.name);
    const v = virt + '/' + ent.name;
    if (ent.isDirectory()) { g.mkdir(v); copyIn(g, h, v); }
    else if (ent.isFile()) g.writeFile(v, fs.readFileSync(h), {encoding: 'binary'});
  }
}

function copyOut(g, virt, host) {
  for (const name of g.readdir(virt)) {
    if (name === '.' || name === '..') continue;
    const v = virt + '/' + name;
    const h = path.join(host, name);
    const st = g.stat(v);
    if ((st.mode & 0o170000) === 0o040000) {
      fs.mkdirSync(h, {recursive: true});
      copyOut(g, v, h);
    } else {
      const data = Buffer.from(g.readFile(v, {encoding: 'binary'}));
      let same = false;
      try { same = fs.readFileSync(h).equals(data); } catch (x) { same = false; }
      if (!same) fs.writeFileSync(h, data);
    }
  }
}

function compile(req) {
  const out = [];
  const result = {id: req.id, status: null, transcript: '', accessed: null,
                  log_overflow: false, error: null};
  const sandbox = {
    self: {postMessage: (m) => {
      const d = JSON.parse(m);
      if (d.command === 'stdout' || d.command === 'stderr') out.push(d.contents + '\n');
      else if (d.command === 'error') result.error = d.message;
    }},
    console: {log: () => {}, error: () => {}, warn: () => {}},
    process: fakeProcess(out), require, Buffer,
    setTimeout: () => 0, clearTimeout: () => {},
    Date: pinnedDate(req.epoch * 1000),
  };
  vm.createContext(sandbox);
  script.runInContext(sandbox);
  const g = sandbox.g, e = sandbox.e;
  const origH = sandbox.H;
  sandbox.H = function (s, dontAddNull, len) {
    return Buffer.isBuffer(s) ? s : origH(s, dontAddNull, len);
  };
  e.read = (f) => fs.readFileSync(f);
  e.onExit = (code) => { result.status = code; };

  for (const [v, h, size] of TREE) {
    if (h === null) { try { g.mkdir(v); } catch (x) { /* exists */ } continue; }
    const slash = v.lastIndexOf('/');
    const node = g.nc(v.slice(0, slash) || '/', v.slice(slash + 1), h, true, false);
    node.k = {length: size, get(i) { node.k = hostBytes(h); return node.k[i]; }};
  }
  g.mkdir('/work');
  copyIn(g, req.cwd, '/work');
  g.chdir('/work');

  const accessed = new Set();
  const logLimit = req.log_limit || 0;
  const written = new Map();
  const origOpen = g.open, origWrite = g.write;
  let tracing = true;
  g.open = function (p, flags, mode, fdStart, fdEnd) {
    const stream = origOpen.call(this, p, flags, mode, fdStart, fdEnd);
    if (tracing && req.trace) {
      const readable = typeof flags === 'string' ? flags.startsWith('r') || flags.includes('+')
                                                 : (flags & 3) !== 1;
      const full = stream && stream.path ? stream.path : String(p);
      if (readable && full.startsWith('/work/')) accessed.add(full.slice(6));
    }
    return stream;
  };
  g.write = function (stream, buffer, offset, length, position, canOwn) {
    if (logLimit && stream && stream.path && stream.path.endsWith('.log')) {
      const n = (written.get(stream.path) || 0) + length;
      written.set(stream.path, n);
      if (n > logLimit) { result.log_overflow = true; throw new LogOverflow('log limit exceeded'); }
    }
    return origWrite.call(this, stream, buffer, offset, length, position, canOwn);
  };

  try {
    sandbox.self.onmessage({data: JSON.stringify({command: 'set_TOTAL_MEMORY',
      arguments: [req.memory || 256 * 1024 * 1024], msg_id: 0})});
    sandbox.self.onmessage({data: JSON.stringify({command: 'run', arguments: req.args, msg_id: 1})});
  } catch (x) {
    result.error = String(x);
  }
  tracing = false;
  g.open = origOpen; g.write = origWrite;
  if (result.log_overflow) result.error = 'log limit exceeded';
  try { copyOut(g, '/work', req.cwd); } catch (x) { result.error = result.error || ('copy-out: ' + x); }
  if (req.trace) result.accessed = Array.from(accessed).sort();
  result.transcript = out.join('');
  return result;
}

const rl = readline.createInterface({input: process.stdin, terminal: false});
const reply = (obj) => process.stdout.write(JSON.stringify(obj) + '\n');
const version = JSON.parse(fs.readFileSync(path.join(PKG, 'package.json'))).version;
reply({ready: true, version: 'texlive.js ' + version});
rl.on('line', (line) => {
  if (!line.trim()) return;
  let req;
  try { req = JSON.parse(line); } catch (x) { reply({error: 'bad request'}); return; }
  if (req.op === 'ping') { reply({id: req.id, pong: true}); return; }
  try { reply(compile(req)); } catch (x) { reply({id: req.id, status: null, error: String(x && x.stack || x)}); }
});
