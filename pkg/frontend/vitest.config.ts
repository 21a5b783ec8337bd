import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    testTimeout: 120000,
    hookTimeout: 180000,
    // renders go through a single shared server; keep files sequential
    fileParallelism: false,
  },
});
