import { defineConfig } from "vitest/config";

export default defineConfig({
  resolve: {
    // sources use NodeNext ".js" specifiers so the tsc output runs in the
    // browser untouched; map them back to the .ts files for tests
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
  },
});
