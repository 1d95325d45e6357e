import { AnnotationApp } from "./app.js";
import { AnnotationClient } from "./client.js";

const root = document.getElementById("app");
if (root) {
  const app = new AnnotationApp(root, new AnnotationClient());
  void app.start();
}
