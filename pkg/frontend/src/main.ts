import { ApiClient } from "./api.js";
import { App } from "./app.js";

/** API origin: ?api=... pins it for the session, default is same-origin. */
function apiBase(): string {
  const override = new URLSearchParams(location.search).get("api");
  if (override != null) localStorage.setItem("logward.api", override);
  return localStorage.getItem("logward.api") ?? "";
}

const root = document.getElementById("app");
if (root) {
  new App(root, new ApiClient(apiBase())).start();
}
