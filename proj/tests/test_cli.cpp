#include <gtest/gtest.h>

#include <sstream>

#include "fibersr/cli.hpp"

using namespace fibersr;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fibersr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"metrics", "only_one.pgm"}).code, 1);
  EXPECT_EQ(run({"train", "--data", "x"}).code, 1);
  const CliResult r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("degrade"), std::string::npos);
}

TEST(Cli, MetricsOnIdenticalFiles) {
  const auto dir = scratch("metrics");
  ASSERT_EQ(run({"phantom", "--width", "24", "--height", "20", (dir / "a.pgm").string()}).code, 0);
  CliResult r = run({"metrics", (dir / "a.pgm").string(), (dir / "a.pgm").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "inf,1\n");
  r = run({"metrics", "--header", (dir / "a.pgm").string(), (dir / "a.pgm").string()});
  EXPECT_EQ(r.out, "psnr_db,ssim\ninf,1\n");
  fs::remove_all(dir);
}

TEST(Cli, DataErrorsExitTwo) {
  const auto dir = scratch("bad");
  write_file_atomic(dir / "junk.pgm", std::string("P2\n2 2\n255\n0 0 0 0\n"));
  CliResult r = run({"metrics", (dir / "junk.pgm").string(), (dir / "junk.pgm").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
  r = run({"metrics", (dir / "missing.pgm").string(), (dir / "missing.pgm").string()});
  EXPECT_EQ(r.code, 2);
  r = run({"samplesize", "--power", "1.5"});
  EXPECT_EQ(r.code, 2);
  fs::remove_all(dir);
}

TEST(Cli, SampleSize) {
  const CliResult r = run({"samplesize"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, std::to_string(equivalence_sample_size(0.8, 0.05, 0.15, 0.7)) + "\n");
  const CliResult hi = run({"samplesize", "--power", "0.9"});
  EXPECT_GT(std::stoll(hi.out), std::stoll(r.out));
}

TEST(Cli, PipelineSmoke) {
  const auto dir = scratch("pipeline");
  const std::string d = dir.string();
  for (const char* split : {"train", "val"}) {
    ASSERT_EQ(run({"--seed", split[0] == 't' ? "1" : "2", "phantom", "--width", "32", "--height", "32", "--count", "2",
                   d + "/" + split + "/hr"})
                  .code,
              0);
    const CliResult r = run({"degrade", "--fiber-diameter", "4", "--inter-fiber-distance", "8", "--max-offset", "2",
                       d + "/" + split + "/hr", d + "/" + split + "/lr"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  CliResult r = run({"train", "--data", d + "/train", "--val", d + "/val", "--weights", d + "/w.srcw", "--history",
               d + "/history.csv", "--epochs", "2", "--patch-size", "16", "--batch-size", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file(dir / "history.csv").rfind("epoch,train_mse,val_mse\n", 0), 0u);

  const auto lr = std::vector<fs::path>(fs::directory_iterator(dir / "val/lr"), {});
  ASSERT_FALSE(lr.empty());
  r = run({"infer", "--weights", d + "/w.srcw", lr[0].string(), d + "/sr.pgm"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Image sr = read_pgm(dir / "sr.pgm");
  EXPECT_EQ(sr.width(), 32);
  EXPECT_EQ(sr.height(), 32);

  r = run({"metrics", (dir / "val/hr" / lr[0].filename()).string(), d + "/sr.pgm"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(','), std::string::npos);

  r = run({"profile", "--row", "5", "--col-start", "2", "--col-end", "6", d + "/sr.pgm"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);

  r = run({"preprocess", d + "/sr.pgm", d + "/pp.pgm"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "pp.pgm"));
  fs::remove_all(dir);
}

TEST(Cli, DegradeSameSeedSameOutput) {
  const auto dir = scratch("degrade");
  const std::string d = dir.string();
  ASSERT_EQ(run({"phantom", "--width", "40", "--height", "30", d + "/hr.pgm"}).code, 0);
  for (const char* name : {"/a.pgm", "/b.pgm"})
    ASSERT_EQ(run({"degrade", "--seed", "9", "--samples", d + name + ".csv", d + "/hr.pgm", d + name}).code, 0);
  EXPECT_EQ(read_file(dir / "a.pgm"), read_file(dir / "b.pgm"));
  EXPECT_EQ(read_text_file(dir / "a.pgm.csv"), read_text_file(dir / "b.pgm.csv"));
  fs::remove_all(dir);
}

TEST(Cli, ReaderStatsWritesReports) {
  const auto dir = scratch("readers");
  std::ostringstream reads;
  reads << kReadsHeader << '\n';
  for (int reader = 0; reader < 3; ++reader)
    for (int img = 0; img < 6; ++img)
      for (const char* mod : {"HR", "SR"}) {
        const bool neo = img % 2 == 0;
        const bool wrong = (img + reader) % 5 == 0 && mod[0] == 'S';
        reads << "img" << img << ",r" << reader << ',' << mod << ','
              << ((neo != wrong) ? "neoplastic" : "non_neoplastic") << ',' << (img < 3 ? "high" : "low") << ','
              << (neo ? "neoplastic" : "non_neoplastic") << '\n';
      }
  write_file_atomic(dir / "reads.csv", reads.str());
  CliResult r = run({"readerstats", "--reads", (dir / "reads.csv").string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"per_reader.csv", "confidence.csv", "tests.csv"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  r = run({"readerstats", "--welch", "--reads", (dir / "reads.csv").string(), "--out", (dir / "welch").string()});
  EXPECT_EQ(r.code, 0) << r.err;

  write_file_atomic(dir / "bad.csv", std::string("image_id,reader_id\n"));
  r = run({"readerstats", "--reads", (dir / "bad.csv").string(), "--out", (dir / "x").string()});
  EXPECT_EQ(r.code, 2);
  fs::remove_all(dir);
}
