#include <cal/csv.hpp>
#include <cal/error.hpp>

#include <gtest/gtest.h>

using cal::csv::parse;

TEST(Csv, QuotedFieldsKeepCommasQuotesAndNewlines) {
    auto rows = parse("id,text\n1,\"a, b\"\n2,\"say \"\"hi\"\"\"\n3,\"two\nlines\"\n");
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[1].fields[1], "a, b");
    EXPECT_EQ(rows[2].fields[1], "say \"hi\"");
    EXPECT_EQ(rows[3].fields[1], "two\nlines");
    EXPECT_EQ(rows[3].line, 4u);
}

TEST(Csv, BomCrlfAndBlankLines) {
    auto rows = parse("\xEF\xBB\xBFid,text\r\n\r\n1,x\r\n2,\r\n");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].fields[0], "id");
    EXPECT_EQ(rows[1].line, 3u);
    ASSERT_EQ(rows[2].fields.size(), 2u);
    EXPECT_EQ(rows[2].fields[1], "");
}

TEST(Csv, UnterminatedQuoteIsAParseError) {
    try {
        parse("id,text\n1,\"open\n");
        FAIL();
    } catch (const cal::Error& e) {
        EXPECT_EQ(e.code(), cal::ErrorCode::parse);
    }
}

TEST(Csv, QuoteRoundTrips) {
    std::string out;
    cal::csv::append_row(out, {"plain", "with,comma", "with \"quote\"", "multi\nline"});
    auto rows = parse(out);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].fields, (std::vector<std::string>{"plain", "with,comma", "with \"quote\"", "multi\nline"}));
}
