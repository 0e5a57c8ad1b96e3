import { startConsole } from "./app";
import { HttpService } from "./protocol";

const root = document.getElementById("console-root");
if (root) {
  startConsole(root, new HttpService(), { autostart: true });
}
