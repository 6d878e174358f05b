import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    testTimeout: 60_000,
    hookTimeout: 60_000,
    // the e2e test owns a live python server; keep runs serial
    fileParallelism: false,
  },
});
