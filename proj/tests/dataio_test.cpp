#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <sstream>

#include "spectradiff/checkpoint.hpp"
#include "spectradiff/config.hpp"
#include "spectradiff/errors.hpp"
#include "spectradiff/sampler.hpp"

namespace sd = spectradiff;

namespace {

const char* kCsv =
    "label,b1,b2,b3\n"
    "grass,0.10,0.20,0.30\n"
    "soil,0.40,0.25,0.30\n"
    "\n"
    "grass,0.12,0.22,0.30\n"
    "water,0.02,0.01,0.30\n";

sd::Dataset parse(const std::string& text, sd::NormRecord::Mode mode = sd::NormRecord::Mode::minmax) {
    std::istringstream in(text);
    return sd::parse_csv(in, mode);
}

std::size_t error_line(const std::string& text) {
    try {
        parse(text);
    } catch (const sd::ParseError& e) {
        return e.line();
    }
    return 0;
}

sd::Checkpoint small_checkpoint() {
    const auto ds = sd::make_benchmark(3, 6, 8, 1);
    sd::DenoiserConfig dc;
    dc.patch_size = 4;
    dc.hidden = 8;
    dc.depth = 1;
    dc.heads = 2;
    sd::ScheduleConfig sc;
    sc.timesteps = 12;
    sc.delta = 1.3;
    sd::DiffusionTrainConfig tc;
    tc.steps = 3;
    return sd::train_checkpoint(ds, dc, sc, tc, 2);
}

std::string serialize(const sd::Checkpoint& ck) {
    std::ostringstream out(std::ios::binary);
    sd::save_checkpoint(ck, out);
    return out.str();
}

sd::Checkpoint deserialize(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    return sd::load_checkpoint(in);
}

}  // namespace

TEST(Csv, ParsesLabelsInFirstAppearanceOrder) {
    const auto ds = parse(kCsv);
    EXPECT_EQ(ds.class_names, (std::vector<std::string>{"grass", "soil", "water"}));
    EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 0, 2}));
    EXPECT_EQ(ds.band_names, (std::vector<std::string>{"b1", "b2", "b3"}));
    EXPECT_EQ(ds.synthetic_count(), 0u);
    EXPECT_NO_THROW(ds.validate());
}

TEST(Csv, MinmaxMapsBandExtremesToUnitRange) {
    const auto ds = parse(kCsv);
    EXPECT_EQ(ds.samples(3, 0), -1.0);  // 0.02 is the band minimum
    EXPECT_EQ(ds.samples(1, 0), 1.0);
    EXPECT_EQ(ds.samples(0, 2), 0.0);   // constant band
    for (double v : ds.samples.data()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Csv, NormalizationRoundTripsToReflectance) {
    for (auto mode : {sd::NormRecord::Mode::minmax, sd::NormRecord::Mode::standard}) {
        const auto ds = parse(kCsv, mode);
        const auto raw = sd::denormalize(ds.samples, ds.norm);
        const std::vector<double> first{0.10, 0.20, 0.30};
        for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(raw(0, b), first[b], 1e-15);
        EXPECT_NEAR(raw(3, 1), 0.01, 1e-15);
    }
    EXPECT_THROW(sd::denormalize(sd::Matrix(1, 3), std::nullopt), sd::ContractError);
}

TEST(Csv, WriteThenParseReproducesData) {
    const auto ds = parse(kCsv);
    std::ostringstream out;
    sd::write_csv(ds, out);
    const auto again = parse(out.str());
    EXPECT_EQ(again.class_names, ds.class_names);
    EXPECT_EQ(again.labels, ds.labels);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_NEAR(again.samples.data()[i], ds.samples.data()[i], 1e-12);
    }
}

TEST(Csv, ErrorsCarryLineNumbers) {
    EXPECT_EQ(error_line(""), 1u);
    EXPECT_EQ(error_line("class,b1\nx,1\n"), 1u);
    EXPECT_EQ(error_line("label\n"), 1u);
    EXPECT_EQ(error_line("label,b1,b2\n"), 1u);
    EXPECT_EQ(error_line("label,b1,b2\na,1,2\na,1\n"), 3u);
    EXPECT_EQ(error_line("label,b1,b2\na,1,2\n\nb,1,x\n"), 4u);
    EXPECT_EQ(error_line("label,b1,b2\na,1,nan\n"), 2u);
    EXPECT_EQ(error_line("label,b1,b2\n,1,2\n"), 2u);
    try {
        parse("label,b1,b2\na,1,oops\n");
    } catch (const sd::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("column 3"), std::string::npos);
    }
}

TEST(Csv, ParseLikeReusesClassesAndNormalization) {
    const auto ref = parse(kCsv);
    std::istringstream in("label,b1,b2,b3\nwater,0.40,0.01,0.30\n");
    const auto ds = sd::parse_csv_like(in, ref);
    EXPECT_EQ(ds.class_names, ref.class_names);
    EXPECT_EQ(ds.labels, (std::vector<int>{2}));
    EXPECT_EQ(ds.samples(0, 0), 1.0);
    EXPECT_EQ(ds.samples(0, 1), -1.0);

    std::istringstream unknown("label,b1,b2,b3\nwater,0,0,0\nsnow,0,0,0\n");
    try {
        sd::parse_csv_like(unknown, ref);
        FAIL() << "expected ParseError";
    } catch (const sd::ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::istringstream narrow("label,b1\nwater,0\n");
    EXPECT_THROW(sd::parse_csv_like(narrow, ref), sd::ParseError);
}

TEST(Benchmark, IsDeterministicAndNormalized) {
    const auto a = sd::make_benchmark(4, 10, 16, 3);
    const auto b = sd::make_benchmark(4, 10, 16, 3);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.size(), 40u);
    EXPECT_TRUE(a.norm.has_value());
    for (double v : a.samples.data()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_THROW(sd::make_benchmark(0, 10, 16, 3), sd::ConfigError);
}

TEST(RunConfig, SetGetRoundTripsEveryKey) {
    sd::RunConfig c;
    for (const auto& key : sd::RunConfig::keys()) {
        sd::RunConfig other;
        EXPECT_NO_THROW(other.set(key, c.get(key))) << key;
        EXPECT_EQ(other.get(key), c.get(key)) << key;
    }
}

TEST(RunConfig, MergeStreamAppliesValuesAndSkipsComments) {
    sd::RunConfig c;
    std::istringstream in(
        "# comment\n"
        "schedule.T = 250\n"
        "\n"
        "schedule.delta = 1.5  # trailing\n"
        "eval.seeds = 3, 4\n"
        "eval.channels = 8,8,16,16,32\n"
        "augment.method = smote\n");
    c.merge_stream(in);
    EXPECT_EQ(c.schedule.timesteps, 250);
    EXPECT_EQ(c.schedule.delta, 1.5);
    EXPECT_EQ(c.eval_seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_EQ(c.classifier.channels, (std::array<int, 5>{8, 8, 16, 16, 32}));
    EXPECT_EQ(c.augment.method, sd::AugmentMethod::smote);
}

TEST(RunConfig, ErrorsNameKeyOrLine) {
    sd::RunConfig c;
    EXPECT_THROW(c.set("schedule.tau", "1"), sd::ConfigError);
    EXPECT_THROW(c.set("schedule.T", "ten"), sd::ConfigError);
    EXPECT_THROW(c.set("eval.channels", "1,2,3"), sd::ConfigError);
    EXPECT_THROW(c.set("eval.seeds", ""), sd::ConfigError);
    EXPECT_THROW(c.set("data.norm", "zscore"), sd::ConfigError);
    std::istringstream bad("schedule.T = 10\nnot a pair\n");
    try {
        c.merge_stream(bad);
        FAIL() << "expected ParseError";
    } catch (const sd::ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    std::istringstream unknown("\n\nfoo.bar = 1\n");
    try {
        c.merge_stream(unknown);
        FAIL() << "expected ParseError";
    } catch (const sd::ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("foo.bar"), std::string::npos);
    }
}

TEST(RunConfig, DumpListsEveryKey) {
    const sd::RunConfig c;
    const auto text = c.dump();
    for (const auto& key : sd::RunConfig::keys()) {
        EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
    }
    sd::RunConfig again;
    std::istringstream in(text);
    again.merge_stream(in);
    EXPECT_EQ(again.dump(), text);
}

TEST(Checkpoint, RoundTripIsExact) {
    const auto ck = small_checkpoint();
    const auto bytes = serialize(ck);
    ASSERT_EQ(std::memcmp(bytes.data(), sd::kCheckpointMagic, 8), 0);
    const auto loaded = deserialize(bytes);
    EXPECT_EQ(loaded.class_names, ck.class_names);
    EXPECT_EQ(loaded.schedule.timesteps, 12);
    EXPECT_EQ(loaded.schedule.delta, 1.3);
    ASSERT_TRUE(loaded.norm.has_value());
    EXPECT_EQ(loaded.norm->lo, ck.norm->lo);
    EXPECT_EQ(loaded.norm->hi, ck.norm->hi);
    ASSERT_EQ(loaded.model.params().size(), ck.model.params().size());
    for (std::size_t i = 0; i < ck.model.params().size(); ++i) {
        EXPECT_EQ(loaded.model.params()[i].first, ck.model.params()[i].first);
        EXPECT_TRUE(std::ranges::equal(loaded.model.params()[i].second.data(), ck.model.params()[i].second.data()));
    }
    EXPECT_EQ(serialize(loaded), bytes);
    sd::SampleRequest req;
    req.count = 4;
    req.seed = 9;
    const auto sched = sd::build_schedule(ck.schedule);
    EXPECT_EQ(sd::sample(req, loaded.model, sched), sd::sample(req, ck.model, sched));
}

TEST(Checkpoint, BadMagicAndVersionAreRejected) {
    auto bytes = serialize(small_checkpoint());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize(bad_magic), sd::ParseError);
    auto bad_version = bytes;
    bad_version[8] = 2;
    try {
        deserialize(bad_version);
        FAIL() << "expected ParseError";
    } catch (const sd::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
    }
}

TEST(Checkpoint, EveryTruncationIsRejected) {
    const auto bytes = serialize(small_checkpoint());
    for (std::size_t len = 0; len < bytes.size(); len += std::max<std::size_t>(1, len / 16)) {
        EXPECT_THROW(deserialize(bytes.substr(0, len)), sd::ParseError) << "length " << len;
    }
    EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 1)), sd::ParseError);
}

TEST(Checkpoint, MissingFileIsParseError) {
    EXPECT_THROW(sd::load_checkpoint(std::filesystem::path("/nonexistent/ck.bin")), sd::ParseError);
}
