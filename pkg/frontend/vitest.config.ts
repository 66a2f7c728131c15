import { defineConfig } from "vitest/config";

// Every test shells out to the Python core, so give them generous time.
export default defineConfig({
  test: {
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
