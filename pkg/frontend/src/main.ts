import { ApiClient } from "./api.js";
import { App } from "./app.js";

interface UiConfig {
  baseUrl?: string;
  token?: string;
}

declare global {
  interface Window {
    RINGWATCH_CONFIG?: UiConfig;
  }
}

const config = window.RINGWATCH_CONFIG ?? {};
const client = new ApiClient({
  baseUrl: config.baseUrl ?? "",
  token: config.token,
});
const root = document.getElementById("app");
if (root) {
  new App(client, root).start();
}
