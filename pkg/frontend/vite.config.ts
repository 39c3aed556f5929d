import { defineConfig } from "vitest/config";

export default defineConfig({
  // relative asset paths so the bundle works from `ghostarm serve --serve-ui dist`
  // or any static file server, regardless of mount point
  base: "./",
  build: { outDir: "dist" },
  test: {
    environment: "node",
    // integration spawns a real gateway; generous ceiling, individual
    // waits are much shorter
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
