#include "doctest.h"
TEST_SUITE("burgers") {}
