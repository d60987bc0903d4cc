import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the round-trip suite spawns the real annotation server
    testTimeout: 180_000,
    hookTimeout: 180_000,
    fileParallelism: false,
  },
});
