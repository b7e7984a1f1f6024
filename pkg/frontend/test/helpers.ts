import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { AppElements } from "../src/app.js";
import type { QueryResponse } from "../src/types.js";

const FIXTURE_DIR = join(dirname(fileURLToPath(import.meta.url)), "..", "mock", "fixtures");

export function loadFixture(name: string): QueryResponse {
  return JSON.parse(readFileSync(join(FIXTURE_DIR, name), "utf-8")) as QueryResponse;
}

export function scaffold(): AppElements {
  document.body.innerHTML = `
    <div id="conversation"></div>
    <div id="banner"></div>
    <form id="query-form">
      <input id="query-input" />
      <button id="query-submit" type="submit">Ask</button>
    </form>
    <aside id="sidebar"></aside>
  `;
  const pick = <T extends Element>(selector: string): T => {
    const node = document.querySelector<T>(selector);
    if (!node) throw new Error(`scaffold missing ${selector}`);
    return node;
  };
  return {
    form: pick<HTMLFormElement>("#query-form"),
    input: pick<HTMLInputElement>("#query-input"),
    submit: pick<HTMLButtonElement>("#query-submit"),
    conversation: pick<HTMLElement>("#conversation"),
    sidebar: pick<HTMLElement>("#sidebar"),
    banner: pick<HTMLElement>("#banner"),
  };
}
