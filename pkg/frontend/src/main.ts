import { ApiClient } from "./api.js";
import { App } from "./app.js";
import type { AppElements } from "./app.js";

function baseUrl(): string {
  const meta = document.querySelector<HTMLMetaElement>('meta[name="secrag-base-url"]');
  return meta?.content || "http://127.0.0.1:8080";
}

function requireElement<T extends Element>(selector: string): T {
  const node = document.querySelector<T>(selector);
  if (!node) {
    throw new Error(`missing element ${selector}`);
  }
  return node;
}

export function mount(): App {
  const elements: AppElements = {
    form: requireElement<HTMLFormElement>("#query-form"),
    input: requireElement<HTMLInputElement>("#query-input"),
    submit: requireElement<HTMLButtonElement>("#query-submit"),
    conversation: requireElement<HTMLElement>("#conversation"),
    sidebar: requireElement<HTMLElement>("#sidebar"),
    banner: requireElement<HTMLElement>("#banner"),
  };
  return new App(new ApiClient(baseUrl()), elements);
}

mount();
