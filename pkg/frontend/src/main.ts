/**
 * Browser entry point. Connection parameters come from the query
 * string (?server=http://127.0.0.1:8765&round=round1&coder=ana); a
 * small form asks for anything missing.
 */

import { AnnotationApi } from "./api.js";
import { AnnotationApp } from "./app.js";

function param(name: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? "";
}

function connectForm(root: HTMLElement): void {
  const form = document.createElement("form");
  form.className = "connect";
  const fields: Array<[string, string]> = [
    ["server", "http://127.0.0.1:8765"],
    ["round", "round1"],
    ["coder", ""],
  ];
  for (const [name, placeholder] of fields) {
    const label = document.createElement("label");
    label.textContent = name;
    const input = document.createElement("input");
    input.name = name;
    input.value = param(name) || placeholder;
    label.append(input);
    form.append(label);
  }
  const go = document.createElement("button");
  go.type = "submit";
  go.textContent = "start labeling";
  form.append(go);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const query = new URLSearchParams({
      server: String(data.get("server") ?? ""),
      round: String(data.get("round") ?? ""),
      coder: String(data.get("coder") ?? ""),
    });
    window.location.search = query.toString();
  });
  root.append(form);
}

const root = document.getElementById("app");
if (root) {
  const server = param("server");
  const round = param("round");
  const coder = param("coder");
  if (server && round && coder) {
    const app = new AnnotationApp(root, new AnnotationApi(server), round, coder);
    void app.start();
  } else {
    connectForm(root);
  }
}
