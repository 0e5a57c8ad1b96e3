import { defineConfig } from "vitest/config";

// the dev server proxies /api to a local labeling run so `vite` plus
// `coproq label-serve` work together without CORS fuss; the built bundle
// is served by the trainer itself via --static-root.
export default defineConfig({
  server: {
    proxy: {
      "/api": "http://127.0.0.1:8765",
    },
  },
  build: {
    outDir: "dist",
  },
  test: {
    environment: "jsdom",
  },
});
