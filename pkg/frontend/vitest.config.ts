import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // The integration test builds a corpus and boots the real service.
    testTimeout: 60_000,
    hookTimeout: 120_000,
  },
});
