import { SearchClient } from './api.js';
import { SketchApp } from './app.js';

// `?service=http://host:port` points the page at a service on another
// origin; by default it talks to whatever served the page.
const params = new URLSearchParams(window.location.search);
const base = params.get('service') ?? '';

const root = document.getElementById('app');
if (!root) throw new Error('missing #app container');

const app = new SketchApp(root, new SearchClient(base));
void app.refreshStatus();
