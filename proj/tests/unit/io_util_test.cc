#include "pnr/io_util.h"

#include <filesystem>
#include <sstream>

#include "gtest/gtest.h"

namespace pnr {
namespace {

TEST(LittleEndian, RoundTrip) {
  std::stringstream s;
  write_le<std::uint32_t>(s, 0x01020304u);
  write_le<double>(s, -2.5);
  EXPECT_EQ(s.str().substr(0, 4), std::string("\x04\x03\x02\x01", 4));
  EXPECT_EQ(read_le<std::uint32_t>(s), 0x01020304u);
  EXPECT_EQ(read_le<double>(s), -2.5);
  EXPECT_THROW(read_le<std::uint16_t>(s), FormatError);
}

TEST(Parse, Numbers) {
  EXPECT_EQ(parse_u64("18446744073709551615"), 18446744073709551615ull);
  EXPECT_EQ(parse_i64("-42"), -42);
  EXPECT_DOUBLE_EQ(parse_double("1.5e3"), 1500.0);
  EXPECT_THROW(parse_u64("12x"), FormatError);
  EXPECT_THROW(parse_u64("-1"), FormatError);
  EXPECT_THROW(parse_double(""), FormatError);
}

TEST(Csv, HeaderAndRows) {
  std::stringstream s("a,b\r\n1,2\n\n3,4\n");
  CsvReader r(s, {"a", "b"});
  auto row = r.next();
  ASSERT_TRUE(row);
  EXPECT_EQ((*row)[1], "2");
  row = r.next();
  ASSERT_TRUE(row);
  EXPECT_EQ((*row)[0], "3");
  EXPECT_FALSE(r.next());
}

TEST(Csv, WrongHeaderOrWidth) {
  std::stringstream bad_header("x,y\n");
  EXPECT_THROW(CsvReader(bad_header, {"a", "b"}), FormatError);
  std::stringstream bad_row("a,b\n1,2,3\n");
  CsvReader r(bad_row, {"a", "b"});
  EXPECT_THROW(r.next(), FormatError);
}

TEST(Hash, Fnv1a) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(hex64(0xabcull), "0000000000000abc");
}

TEST(TextFile, RoundTrip) {
  auto p = std::filesystem::temp_directory_path() / "pnr_io_util_test.txt";
  write_text_file(p, "hello\n");
  EXPECT_EQ(read_text_file(p), "hello\n");
  EXPECT_EQ(hash_file(p), fnv1a64("hello\n"));
  std::filesystem::remove(p);
  EXPECT_THROW(read_text_file(p), std::runtime_error);
}

}  // namespace
}  // namespace pnr
